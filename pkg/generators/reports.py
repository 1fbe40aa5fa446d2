# generators/reports.py
# Salidas de cada corrida: manifest, JSON, Markdown/HTML, PNG y profundidad

import json
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import markdown
import numpy as np
from PIL import Image

from analyzers.metrics import MetricReport, report_schema
from parsers.dataset import save_image

MANIFEST_FILE = "manifest.json"
_PAQUETES = ("numpy", "pandas", "pydantic", "loguru", "markdown", "Pillow", "python-dotenv")
DEPTH_PNG_MAX = 65535


def package_versions() -> Dict[str, Optional[str]]:
    versiones = {}
    for nombre in _PAQUETES:
        try:
            versiones[nombre] = metadata.version(nombre)
        except metadata.PackageNotFoundError:
            versiones[nombre] = None
    return versiones


def write_json(path: Union[str, Path], datos: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(datos, f, indent=2, ensure_ascii=False)
    return path


def write_manifest(out_dir: Union[str, Path], subcommand: str, config: Dict[str, Any],
                   seed: Optional[int], extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    manifest.json: subcomando, configuración resuelta, semilla, versiones
    y marca de tiempo.
    """
    datos = {
        'subcommand': subcommand,
        'seed': seed,
        'config': config,
        'versions': package_versions(),
        'timestamp': datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        datos.update(extra)
    return write_json(Path(out_dir) / MANIFEST_FILE, datos)


def metrics_markdown(report: MetricReport) -> str:
    def fmt(x):
        return "indefinido" if x is None else f"{x:.2f} dB"

    lineas = [
        "# Reporte de métricas",
        "",
        f"- Checkpoint: `{report.checkpoint}`",
        f"- Dataset: `{report.dataset}`",
        "",
        "| Métrica | Valor |",
        "|---|---|",
        f"| PSNR | {fmt(report.psnr)} |",
        f"| PSNR profundidad | {fmt(report.depth_psnr)} |",
        f"| IMRC | {fmt(report.imrc)} |",
        "",
        "## Por vista",
        "",
        "| Vista | PSNR | PSNR profundidad |",
        "|---|---|---|",
    ]
    lineas += [f"| {v.view} | {fmt(v.psnr)} | {fmt(v.depth_psnr)} |" for v in report.per_view]
    return "\n".join(lineas) + "\n"


def write_metric_report(out_dir: Union[str, Path], report: MetricReport) -> Dict[str, Path]:
    """metrics.json, metrics.md, metrics.html y el esquema JSON publicado."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    texto = metrics_markdown(report)
    (out_dir / "metrics.md").write_text(texto, encoding='utf-8')
    html = markdown.markdown(texto, extensions=['tables'])
    (out_dir / "metrics.html").write_text(html, encoding='utf-8')
    return {
        'json': write_json(out_dir / "metrics.json", report.to_dict()),
        'markdown': out_dir / "metrics.md",
        'html': out_dir / "metrics.html",
        'schema': write_json(out_dir / "metric_report.schema.json", report_schema()),
    }


def depth_to_uint16(depth, t_far: float) -> np.ndarray:
    """Profundidad normalizada por t_far a 16 bits."""
    d = np.clip(np.asarray(depth, dtype=np.float64) / t_far, 0.0, 1.0)
    return np.round(d * DEPTH_PNG_MAX).astype(np.uint16)


def save_depth_png(path: Union[str, Path], depth, t_far: float) -> Path:
    path = Path(path)
    Image.fromarray(depth_to_uint16(depth, t_far)).save(path)
    return path


def load_depth_png(path: Union[str, Path], t_far: float) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / DEPTH_PNG_MAX * t_far


def save_f32(path: Union[str, Path], values) -> Path:
    """Array crudo float32 little-endian (sin cabecera)."""
    path = Path(path)
    np.asarray(values, dtype='<f4').tofile(path)
    return path


def save_views(out_dir: Union[str, Path], renders: Sequence[np.ndarray],
               depths: Optional[Sequence[np.ndarray]] = None, t_far: float = 100.0,
               subdir: str = "renders") -> Path:
    """
    renders/NNN.png y, si hay profundidades, depth/NNN.png (16 bits) + depth/NNN.f32.
    """
    out_dir = Path(out_dir)
    (out_dir / subdir).mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(renders):
        save_image(out_dir / subdir / f"{k:03d}.png", img)
    if depths is not None:
        (out_dir / "depth").mkdir(parents=True, exist_ok=True)
        for k, d in enumerate(depths):
            save_depth_png(out_dir / "depth" / f"{k:03d}.png", d, t_far)
            save_f32(out_dir / "depth" / f"{k:03d}.f32", d)
    return out_dir
