# analyzers/metrics.py
# PSNR, PSNR de profundidad e IMRC (inverso del color residual medio)

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from extractors.cf_estimator import (ColorFieldEstimate, DirectionPdf, EstimatorConfig,
                                     VoxelSet, estimate_color_field)
from utils.camera import PosedImage
from utils.errors import ConfigurationError, ShapeMismatchError
from utils.field_grid import DensityGrid

PSNR_CAP = 99.0


def _mse_a_db(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr(img, ref) -> float:
    """
    PSNR en dB para imágenes en [0, 1]; MSE = 0 se acota a 99 dB.

    Es simétrica en sus argumentos.
    """
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Dimensiones distintas: {a.shape} vs {b.shape}")
    return _mse_a_db(float(np.mean((a - b) ** 2)))


def depth_psnr(depth, ref_depth) -> float:
    """
    PSNR de profundidad.

    Ambos mapas se normalizan con el mínimo/máximo de la referencia, por
    eso no es simétrica. Una referencia constante es un error.
    """
    d = np.asarray(depth, dtype=np.float64)
    r = np.asarray(ref_depth, dtype=np.float64)
    if d.shape != r.shape:
        raise ShapeMismatchError(f"Dimensiones distintas: {d.shape} vs {r.shape}")
    lo, hi = float(np.min(r)), float(np.max(r))
    if not hi > lo:
        raise ConfigurationError("Mapa de profundidad de referencia constante: no se puede normalizar",
                                 {'min': lo, 'max': hi})
    return psnr((d - lo) / (hi - lo), (r - lo) / (hi - lo))


def imrc_from_estimate(estimate: ColorFieldEstimate, density: DensityGrid) -> Optional[float]:
    """
    IMRC a partir de una estimación ya calculada.

        −10·log10( Σ_v Σ_k T_vk (1 − e^{−σ_v δ_v}) c̃² / Σ_v Σ_k T_vk (1 − e^{−σ_v δ_v}) )

    Retorna None si el peso total es cero (escena vacía).
    """
    opacidad = -np.expm1(-density.values.reshape(-1) * density.half_width)
    sel = estimate.estimated.reshape(-1)
    numerador = math.fsum((opacidad[sel] * estimate.residual_sq[sel]).tolist())
    denominador = math.fsum((opacidad[sel] * estimate.weight_sum[sel]).tolist())
    if denominador <= 0:
        return None
    return _mse_a_db(numerador / denominador)


def imrc(density: DensityGrid, dataset: Sequence[PosedImage], pdf: DirectionPdf, degree: int,
         cfg: Optional[EstimatorConfig] = None) -> Optional[float]:
    """
    IMRC de una densidad frente a las imágenes del dataset.

    Se estiman los vóxeles con σ > τ (τ = cfg.min_density, 0 por defecto).
    Retorna None (indefinido) para una escena vacía.
    """
    cfg = cfg or EstimatorConfig(sh_degree=degree)
    est = estimate_color_field(density, dataset, pdf, degree,
                               VoxelSet.occupied(cfg.min_density), cfg)
    return imrc_from_estimate(est, density)


# ── Reporte ────────────────────────────────────────────────────────────────

@dataclass
class ViewMetrics:
    view: int
    psnr: float
    depth_psnr: Optional[float] = None


@dataclass
class MetricReport:
    """
    Resumen de métricas de un checkpoint.

    Valores en dB; None marca un valor indefinido (p. ej. IMRC de una
    escena vacía o profundidad sin referencia).
    """

    psnr: Optional[float]
    depth_psnr: Optional[float]
    imrc: Optional[float]
    per_view: List[ViewMetrics] = field(default_factory=list)
    checkpoint: str = ""
    dataset: str = ""

    def to_dict(self) -> Dict:
        return {
            'psnr': self.psnr,
            'depth_psnr': self.depth_psnr,
            'imrc': self.imrc,
            'per_view': [asdict(v) for v in self.per_view],
            'metadata': {'checkpoint': self.checkpoint, 'dataset': self.dataset},
        }

    def __str__(self):
        def fmt(x):
            return "indefinido" if x is None else f"{x:.2f} dB"

        return f"""
╔══════════════════════════════════════════════════════════════╗
║  REPORTE DE MÉTRICAS                                         ║
╠══════════════════════════════════════════════════════════════╣
║  📊 PSNR:              {fmt(self.psnr):<38}║
║  📏 PSNR profundidad:  {fmt(self.depth_psnr):<38}║
║  🎯 IMRC:              {fmt(self.imrc):<38}║
║  🖼️  Vistas:            {len(self.per_view):<38}║
╚══════════════════════════════════════════════════════════════╝
"""


class ViewMetricsSchema(BaseModel):
    view: int = Field(ge=0)
    psnr: float = Field(le=PSNR_CAP)
    depth_psnr: Optional[float] = Field(default=None, le=PSNR_CAP)


class ReportMetadataSchema(BaseModel):
    checkpoint: str
    dataset: str


class MetricReportSchema(BaseModel):
    """Esquema JSON publicado del reporte de métricas."""

    psnr: Optional[float] = Field(le=PSNR_CAP)
    depth_psnr: Optional[float] = Field(default=None, le=PSNR_CAP)
    imrc: Optional[float] = Field(default=None, le=PSNR_CAP)
    per_view: List[ViewMetricsSchema]
    metadata: ReportMetadataSchema


def report_schema() -> Dict:
    return MetricReportSchema.model_json_schema()


def validate_report(datos: Dict) -> MetricReportSchema:
    return MetricReportSchema.model_validate(datos)


def evaluate_views(rendered: Sequence[np.ndarray], references: Sequence[PosedImage],
                   depths: Optional[Sequence[np.ndarray]] = None,
                   ref_depths: Optional[Sequence[np.ndarray]] = None,
                   imrc_value: Optional[float] = None) -> MetricReport:
    """Arma el MetricReport a partir de renders ya calculados."""
    if len(rendered) != len(references):
        raise ShapeMismatchError(f"{len(rendered)} renders para {len(references)} vistas")
    vistas = []
    for k, (img, ref) in enumerate(zip(rendered, references)):
        dp = None
        if depths is not None and ref_depths is not None:
            dp = depth_psnr(depths[k], ref_depths[k])
        vistas.append(ViewMetrics(k, psnr(img, ref.pixels), dp))

    media_psnr = float(np.mean([v.psnr for v in vistas])) if vistas else None
    con_prof = [v.depth_psnr for v in vistas if v.depth_psnr is not None]
    media_prof = float(np.mean(con_prof)) if con_prof else None
    return MetricReport(media_psnr, media_prof, imrc_value, vistas)
