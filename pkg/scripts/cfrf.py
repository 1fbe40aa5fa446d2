# scripts/cfrf.py
# Punto de entrada de línea de comandos
#
# Uso:
#   python scripts/cfrf.py synth --config config/scene_default.json --out runs/escena
#   python scripts/cfrf.py train --dataset runs/escena --init runs/escena/init.cfrf --out runs/train
#   python scripts/cfrf.py estimate --checkpoint runs/escena/gt.cfrf --dataset runs/escena --out runs/est
#   python scripts/cfrf.py render --checkpoint runs/est/est.cfrf --cameras runs/escena --out runs/vistas
#   python scripts/cfrf.py metrics --checkpoint runs/train/ckpt.cfrf --dataset runs/escena --out runs/met
#   python scripts/cfrf.py fourier-bench --config config/fourier_default.json --out runs/fourier

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

RAIZ = Path(__file__).resolve().parent.parent
if str(RAIZ) not in sys.path:
    sys.path.insert(0, str(RAIZ))

import numpy as np  # noqa: E402
from loguru import logger  # noqa: E402

from analyzers.fourier_lab import ExperimentConfig, run_benchmark, run_dc_table, write_gnuplot  # noqa: E402
from analyzers.metrics import evaluate_views, imrc_from_estimate, psnr  # noqa: E402
from extractors.cf_estimator import EstimatorConfig, VoxelSet, estimate_color_field  # noqa: E402
from generators.corruptions import add_floaters  # noqa: E402
from generators.reports import save_f32, save_views, write_json, write_manifest, write_metric_report  # noqa: E402
from generators.synth_scene import synth_scene  # noqa: E402
from generators.volume_renderer import RenderConfig, render_image  # noqa: E402
from parsers.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from parsers.dataset import load_cameras, load_dataset, load_reference_depths, save_dataset  # noqa: E402
from parsers.scene_spec import load_scene_spec  # noqa: E402
from trainers.train import TrainConfig, TrainState, apply_preset, train  # noqa: E402
from utils.errors import (EXIT_OK, CfrfError, CheckpointError, ConfigurationError, DatasetError,  # noqa: E402
                          OutputError)
from utils.field_grid import ShColorGrid  # noqa: E402
from utils.settings import configure_logging, load_model, load_settings  # noqa: E402
from utils.sh_basis import C0  # noqa: E402

CONFIG_DIR = RAIZ / "config"


# ── Helpers ────────────────────────────────────────────────────────────────

def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"No se pudo crear el directorio de salida {out}: {e}",
                          {'out': str(out)}) from e
    return out


def _estimator_config(args) -> EstimatorConfig:
    cfg = load_model(EstimatorConfig, args.config, sh_degree=args.sh_degree,
                     threads=args.threads or None)
    cambios = {}
    if args.no_occlusion:
        cambios['use_occlusion'] = False
    if args.no_residual:
        cambios['use_residual'] = False
    return cfg.model_copy(update=cambios) if cambios else cfg


def _dataset(ruta) -> list:
    dataset = load_dataset(ruta)
    if not dataset:
        raise DatasetError(f"Dataset vacío: {ruta}")
    return dataset


def _estimate(density, dataset, cfg: EstimatorConfig):
    return estimate_color_field(density, dataset, cfg.direction_pdf(), cfg.sh_degree,
                                VoxelSet.occupied(cfg.min_density, cfg.dilate), cfg)


# ── Subcomandos ────────────────────────────────────────────────────────────

def cmd_synth(args) -> int:
    spec = load_scene_spec(args.config or CONFIG_DIR / "scene_default.json", seed=args.seed)
    out = _out_dir(args)
    escena = synth_scene(spec)
    save_dataset(out, escena.dataset)
    for k, d in enumerate(escena.depths):
        (out / "depth").mkdir(exist_ok=True)
        save_f32(out / "depth" / f"{k:03d}.f32", d)
    save_checkpoint(out / "gt.cfrf", escena.density, escena.color)
    extra = {'scene': escena.to_dict()}
    if args.floaters:
        init = add_floaters(escena.density, args.floaters, seed=spec.seed)
        save_checkpoint(out / "init.cfrf", init)
        extra['init_floaters'] = args.floaters
    write_manifest(out, 'synth', spec.model_dump(mode='json'), spec.seed, extra)
    logger.info(f"✅ Dataset sintético: {len(escena.cameras)} vistas en {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_model(TrainConfig, args.config, lambda_cf=args.lambda_cf, cf_rays=args.cf_rays,
                     sh_degree=args.sh_degree, seed=args.seed, iterations=args.iterations)
    if args.preset:
        cfg = apply_preset(cfg, args.preset, CONFIG_DIR / "train_presets.json")
    est = cfg.estimator.model_copy(update={
        'use_occlusion': cfg.estimator.use_occlusion and not args.no_occlusion,
        'use_residual': cfg.estimator.use_residual and not args.no_residual,
        'threads': args.threads or cfg.estimator.threads,
    })
    cfg = cfg.model_copy(update={'estimator': est})
    out = _out_dir(args)

    dataset = _dataset(args.dataset)
    profundidades = load_reference_depths(args.dataset)
    holdout_idx = set(range(0, len(dataset), args.holdout_every)) if args.holdout_every else set()
    if len(holdout_idx) == len(dataset):
        holdout_idx = set()
    entrenamiento = [v for k, v in enumerate(dataset) if k not in holdout_idx]
    holdout = [dataset[k] for k in sorted(holdout_idx)]
    holdout_depths = [profundidades[k] for k in sorted(holdout_idx)] if profundidades and holdout else None

    ckpt, ruta_estado = out / "ckpt.cfrf", out / "state.json"
    if args.resume:
        if not ckpt.exists() or not ruta_estado.exists():
            raise CheckpointError(f"No hay entrenamiento para reanudar en {out}")
        density, color = load_checkpoint(ckpt)
        estado = TrainState.load(ruta_estado)
    else:
        if not args.init:
            raise ConfigurationError("train requiere --init (checkpoint de densidad inicial) o --resume")
        density, color = load_checkpoint(args.init)
        estado = TrainState(iteration=0, seed=cfg.seed)
    if color is None or color.degree != cfg.sh_degree:
        color = ShColorGrid.zeros_like(density, cfg.sh_degree)

    res = train(entrenamiento, (density, color), cfg, estado, holdout or None, holdout_depths)
    save_checkpoint(ckpt, res.density, res.color)
    res.state.save(ruta_estado)
    res.report.to_csv(out / "losses.csv", append=args.resume)
    ultima = res.report.last
    resumen = {
        'iterations': res.state.iteration,
        'lambda_cf': cfg.lambda_cf,
        'holdout_views': len(holdout),
        'psnr': ultima.psnr if ultima else None,
        'depth_psnr': ultima.depth_psnr if ultima else None,
    }
    write_json(out / "summary.json", resumen)
    write_manifest(out, 'train', cfg.model_dump(mode='json'), cfg.seed,
                   {'dataset': str(args.dataset), 'resumed': bool(args.resume)})
    logger.info(f"✅ Entrenamiento terminado en la iteración {res.state.iteration}: {ckpt}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    density, _ = load_checkpoint(args.checkpoint)
    dataset = _dataset(args.dataset)
    cfg = _estimator_config(args)
    out = _out_dir(args)

    est = _estimate(density, dataset, cfg)
    save_checkpoint(out / "est.cfrf", density, est.grid)

    residuo = ShColorGrid(density.geometry, 0, est.mean_abs_residual[..., None] / C0)
    renders, depths, mapas_residuo, psnrs = [], [], [], []
    for img in dataset:
        vista = render_image(density, est.grid, img.camera, cfg.render)
        rgb = np.clip(vista.rgb, 0.0, 1.0)
        renders.append(rgb)
        depths.append(vista.depth)
        psnrs.append(psnr(rgb, img.pixels))
        mapas_residuo.append(np.clip(render_image(density, residuo, img.camera, cfg.render).rgb, 0.0, 1.0))
    save_views(out, renders, depths, cfg.render.t_far)
    save_views(out, mapas_residuo, subdir="residual")

    resumen = {**est.to_dict(), 'psnr': float(np.mean(psnrs)),
               'imrc': imrc_from_estimate(est, density)}
    write_json(out / "summary.json", resumen)
    write_manifest(out, 'estimate', cfg.model_dump(mode='json'), None,
                   {'checkpoint': str(args.checkpoint), 'dataset': str(args.dataset)})
    logger.info(f"✅ Color estimado para {est.n_estimated} vóxeles | PSNR {resumen['psnr']:.2f} dB")
    return EXIT_OK


def cmd_render(args) -> int:
    density, color = load_checkpoint(args.checkpoint)
    if color is None:
        raise CheckpointError(f"El checkpoint no trae campo de color: {args.checkpoint}")
    cameras = load_cameras(args.cameras)
    cfg = load_model(RenderConfig, args.config)
    out = _out_dir(args)
    renders, depths = [], []
    for cam in cameras:
        vista = render_image(density, color, cam, cfg)
        renders.append(np.clip(vista.rgb, 0.0, 1.0))
        depths.append(vista.depth)
    save_views(out, renders, depths, cfg.t_far)
    write_manifest(out, 'render', cfg.model_dump(mode='json'), None,
                   {'checkpoint': str(args.checkpoint), 'cameras': str(args.cameras)})
    logger.info(f"✅ {len(cameras)} vistas renderizadas en {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    density, color = load_checkpoint(args.checkpoint)
    dataset = _dataset(args.dataset)
    cfg = _estimator_config(args)
    out = _out_dir(args)

    est = _estimate(density, dataset, cfg)
    fuente = color if color is not None else est.grid
    renders, depths = [], []
    for img in dataset:
        vista = render_image(density, fuente, img.camera, cfg.render)
        renders.append(np.clip(vista.rgb, 0.0, 1.0))
        depths.append(vista.depth)
    ref_depths = load_reference_depths(args.dataset)
    report = evaluate_views(renders, dataset, depths if ref_depths else None, ref_depths,
                            imrc_from_estimate(est, density))
    report.checkpoint, report.dataset = str(args.checkpoint), str(args.dataset)
    write_metric_report(out, report)
    write_manifest(out, 'metrics', cfg.model_dump(mode='json'), None)
    print(report)
    return EXIT_OK


def cmd_fourier(args) -> int:
    cfg = load_model(ExperimentConfig, args.config, seed=args.seed, repeats=args.repeats,
                     domain=args.domain)
    out = _out_dir(args)
    if args.dc_table:
        df = run_dc_table(cfg)
        df.to_csv(out / "dc_table.csv", index=False)
        logger.info(f"✅ Tabla DC: {len(df)} filas")
    else:
        df = run_benchmark(cfg)
        df.to_csv(out / "mrmse.csv", index=False)
        write_gnuplot(df, out / "mrmse.dat")
        logger.info(f"✅ MRMSE: {len(df)} filas")
    write_manifest(out, 'fourier-bench', cfg.model_dump(mode='json'), cfg.seed,
                   {'dc_table': bool(args.dc_table)})
    return EXIT_OK


# ── Parser ─────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    comun = argparse.ArgumentParser(add_help=False)
    comun.add_argument('--config', help="archivo JSON de configuración")
    comun.add_argument('--out', required=True, help="directorio de salida")
    comun.add_argument('--seed', type=int, help="semilla (pisa la de la configuración)")
    comun.add_argument('--threads', type=int, default=0, help="hilos para la estimación por vóxel")

    estimador = argparse.ArgumentParser(add_help=False)
    estimador.add_argument('--no-occlusion', action='store_true', help="sin ponderar por transmitancia")
    estimador.add_argument('--no-residual', action='store_true', help="Monte Carlo directo, sin residuos")
    estimador.add_argument('--sh-degree', type=int, help="grado SH (0..4)")

    parser = argparse.ArgumentParser(prog='cfrf', description="Toolkit de campos de color en forma cerrada")
    sub = parser.add_subparsers(dest='subcommand', required=True)

    p = sub.add_parser('synth', parents=[comun], help="genera una escena sintética")
    p.add_argument('--floaters', type=float, default=0.0,
                   help="además escribe init.cfrf con esa fracción de floaters")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('train', parents=[comun, estimador], help="entrena densidad + color")
    p.add_argument('--dataset', required=True)
    p.add_argument('--init', help="checkpoint inicial")
    p.add_argument('--resume', action='store_true', help="continúa desde --out/ckpt.cfrf")
    p.add_argument('--lambda', dest='lambda_cf', type=float, help="peso λ de la pérdida CF")
    p.add_argument('--cf-rays', type=int, help="rayos CF por iteración")
    p.add_argument('--iterations', type=int)
    p.add_argument('--preset', help="preset de config/train_presets.json")
    p.add_argument('--holdout-every', type=int, default=8, help="cada cuántas vistas una de validación (0 = ninguna)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('estimate', parents=[comun, estimador], help="color en forma cerrada")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--dataset', required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser('render', parents=[comun], help="renderiza un checkpoint")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--cameras', required=True, help="cameras.json o directorio del dataset")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser('metrics', parents=[comun, estimador], help="PSNR, PSNR de profundidad e IMRC")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--dataset', required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser('fourier-bench', parents=[comun], help="experimento MRMSE 1D")
    p.add_argument('--dc-table', action='store_true', help="tabla de adiciones DC")
    p.add_argument('--repeats', type=int)
    p.add_argument('--domain', choices=['literal', 'scaled'])
    p.set_defaults(func=cmd_fourier)
    return parser


def _report_error(e: CfrfError) -> int:
    logger.error(f"❌ {e.mensaje}")
    print(json.dumps(e.to_dict(), ensure_ascii=False, default=str), file=sys.stderr)
    return e.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings()
        configure_logging(settings.log_level, settings.log_file)
        if not args.threads and settings.threads > 1:
            args.threads = settings.threads
        return args.func(args)
    except CfrfError as e:
        return _report_error(e)
    except OSError as e:
        return _report_error(OutputError(f"Error de E/S: {e}", {'file': e.filename}))


if __name__ == "__main__":
    sys.exit(main())
