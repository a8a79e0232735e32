"""Командная строка egoplex: gen-synthetic, fit, eval, table3, undistort, losses-demo"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from egoplex.ep_harness import (
    HarnessConfig,
    apply_overrides,
    gen_synthetic,
    run_eval,
    run_fit,
    run_losses_demo,
    run_table3_analogue,
    run_undistort,
)
from egoplex.exceptions import EgoplexError, ParseError
from egoplex.internal.schemas import read_json_file
from egoplex.internal.types import ToyVariant

logger = logging.getLogger("egoplex.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON-конфигурация запуска")
    parser.add_argument("--out", type=Path, required=True, help="Путь или префикс результата")
    parser.add_argument("--seed", type=int, help="Зерно генератора")
    parser.add_argument("--calibration", type=Path, help="JSON-калибровка камеры")
    parser.add_argument("--model", type=Path, help="JSON-модель тела")


def _parallel(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--jobs", type=int, default=1, help="Число потоков")
    parser.add_argument(
        "--progress-bar", action="store_true", help="Показывать индикатор прогресса"
    )


def build_parser() -> argparse.ArgumentParser:
    """Парсер аргументов со всеми подкомандами"""
    parser = argparse.ArgumentParser(
        prog="egoplex",
        description="Синтетический стенд: fisheye-развёртка, подгонка псевдо-GT, PA-метрики",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Журнал уровня DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-synthetic", help="Сгенерировать синтетический датасет")
    _common(gen)
    _parallel(gen)
    gen.add_argument("--num-frames", type=int)
    gen.add_argument("--pose-scale", type=float)
    gen.add_argument("--shape-scale", type=float)
    gen.add_argument("--noise-sigma", type=float)
    gen.add_argument("--outlier-rate", type=float)
    gen.add_argument("--variant", choices=[v.value for v in ToyVariant])

    fit = commands.add_parser("fit", help="Подогнать псевдо-GT для датасета")
    _common(fit)
    _parallel(fit)
    fit.add_argument("dataset", type=Path)

    evaluate = commands.add_parser("eval", help="PA-оценка результатов подгонки")
    _common(evaluate)
    _parallel(evaluate)
    evaluate.add_argument("results", type=Path)
    evaluate.add_argument("dataset", type=Path)
    evaluate.add_argument(
        "--mask",
        help="Маска суставов: блоки и/или индексы через запятую (PA-MPVPE всегда по всей сетке)",
    )

    table3 = commands.add_parser("table3", help="Регрессионная заглушка против оптимизации")
    _common(table3)
    _parallel(table3)
    table3.add_argument("--num-frames", type=int)
    table3.add_argument("--perturbation", type=float)

    undistort = commands.add_parser("undistort", help="Развернуть изображение в патчи")
    _common(undistort)
    undistort.add_argument("image", type=Path)
    undistort.add_argument("--crop", type=int, default=0, help="Столбцов с каждой стороны")

    demo = commands.add_parser("losses-demo", help="Разложение составной потери для кадра")
    _common(demo)
    demo.add_argument("dataset", type=Path)
    demo.add_argument("--frame", type=int, default=0)
    demo.add_argument("--tau", type=float)
    demo.add_argument("--progress", type=float, default=0.0, help="Доля обучения s ∈ [0, 1]")
    demo.add_argument("--perturbation", type=float, default=0.1)
    demo.add_argument("--mask")
    return parser


def _load_config(args: argparse.Namespace) -> HarnessConfig:
    base = read_json_file(args.config, HarnessConfig) if args.config else HarnessConfig()
    synthetic: dict[str, Any] = {"seed": args.seed}
    table3: dict[str, Any] = {}
    if args.command == "gen-synthetic":
        synthetic.update(
            num_frames=args.num_frames,
            pose_scale=args.pose_scale,
            shape_scale=args.shape_scale,
            noise_sigma=args.noise_sigma,
            outlier_rate=args.outlier_rate,
            model_variant=args.variant,
        )
    if args.command == "table3":
        table3.update(num_frames=args.num_frames, perturbation=args.perturbation)
    return apply_overrides(
        base,
        {
            "": {"mask": getattr(args, "mask", None)},
            "synthetic": synthetic,
            "table3": table3,
        },
    )


def _run(args: argparse.Namespace, config: HarnessConfig) -> int:
    jobs = getattr(args, "jobs", 1)
    bar = getattr(args, "progress_bar", False)
    if jobs < 1:
        raise ValueError(f"--jobs должно быть >= 1, получено {jobs}")

    if args.command == "gen-synthetic":
        header = gen_synthetic(
            config.synthetic,
            args.out,
            calibration=args.calibration,
            model_path=args.model,
            jobs=jobs,
            progress=bar,
        )
        print(f"{args.out}: {header.num_frames} кадров")
        return EXIT_OK

    if args.command == "fit":
        results = run_fit(
            args.dataset,
            config,
            args.out,
            calibration=args.calibration,
            model_path=args.model,
            jobs=jobs,
            progress=bar,
        )
        print(f"{args.out}: {len(results.frames)} кадров, ошибок {results.failed}")
        return EXIT_FAILURE if results.failed == len(results.frames) else EXIT_OK

    if args.command == "eval":
        report = run_eval(
            args.results,
            args.dataset,
            config,
            args.out,
            calibration=args.calibration,
            model_path=args.model,
            jobs=jobs,
            progress=bar,
        )
        print(
            f"{args.out}: PA-MPJPE mean={report.pa_mpjpe.mean} мм, "
            f"PA-MPVPE mean={report.pa_mpvpe.mean} мм, пропущено {len(report.failures)}"
        )
        return EXIT_FAILURE if not report.rows else EXIT_OK

    if args.command == "table3":
        table = run_table3_analogue(
            config,
            args.out,
            calibration=args.calibration,
            model_path=args.model,
            jobs=jobs,
            progress=bar,
        )
        print(
            f"{args.out}: регрессия {table.regression.mean} мм, "
            f"оптимизация {table.optimization.mean} мм"
        )
        return EXIT_FAILURE if table.optimization.count == 0 else EXIT_OK

    if args.command == "undistort":
        summary = run_undistort(
            args.image, config, args.out, calibration=args.calibration, crop=args.crop
        )
        print(f"{summary.mosaic_path}: {summary.num_patches} патчей")
        return EXIT_OK

    demo = run_losses_demo(
        args.dataset,
        args.frame,
        config,
        args.out,
        tau=args.tau,
        progress=args.progress,
        perturbation=args.perturbation,
        calibration=args.calibration,
        model_path=args.model,
    )
    print(f"{args.out}: total={demo.against_self.total} / {demo.perturbed.total}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """
    Точка входа CLI

    Returns:
        0 — успех, 1 — полный отказ (ни один кадр не обработан или ошибка
        предметной области), 2 — некорректные аргументы или конфигурация
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        config = _load_config(args)
    except (ParseError, ValidationError) as exc:
        logger.error("Некорректная конфигурация: %s", exc)
        return EXIT_USAGE

    try:
        return _run(args, config)
    except (ValueError, ValidationError) as exc:
        logger.error("Некорректные аргументы: %s", exc)
        return EXIT_USAGE
    except EgoplexError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
