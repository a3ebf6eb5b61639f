"""Stage composition: lift, refine, evaluate.

These functions work on in-memory objects; :mod:`echoseg.cli` wraps them with
file I/O.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .aisrm import RefinementConfig, refine
from .binaural import AudioIntensityMap, RmsObservation, accumulate_intensity
from .errors import InputError
from .gs_scene import CameraPose, GaussianCloud
from .mask_lifting import MaskImage, Segmentation, VotingConfig, tally_votes
from .render_eval import EvalConfig, Metrics, RenderConfig, evaluate, split_indices


@dataclass(frozen=True)
class PipelineConfig:
    tau_voting: float = 0.3
    eps: float = 0.04
    min_points: int = 6
    tau_ref: float = 0.85
    volume_sigma_factor: float = 0.5
    alpha_threshold: float = 0.5
    beta_squared: float = 0.3
    use_aisrm: bool = True
    eval_split: str = "test"

    def __post_init__(self):
        if self.eval_split not in ("test", "all"):
            raise InputError(f"eval_split must be 'test' or 'all', got {self.eval_split!r}")
        # constructing the stage configs validates their ranges
        self.voting, self.refinement, self.render, self.evaluation

    @property
    def voting(self) -> VotingConfig:
        return VotingConfig(self.tau_voting)

    @property
    def refinement(self) -> RefinementConfig:
        return RefinementConfig(self.eps, self.min_points, self.tau_ref, self.volume_sigma_factor)

    @property
    def render(self) -> RenderConfig:
        return RenderConfig(self.alpha_threshold)

    @property
    def evaluation(self) -> EvalConfig:
        return EvalConfig(self.beta_squared)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def lift(cloud: GaussianCloud, views: Sequence[tuple[CameraPose, MaskImage]],
         cfg: PipelineConfig = PipelineConfig()) -> Segmentation:
    return tally_votes(cloud, views).select(cfg.tau_voting)


def refine_stage(cloud: GaussianCloud, seg: Segmentation,
                 observations: Sequence[RmsObservation] | AudioIntensityMap,
                 cfg: PipelineConfig = PipelineConfig()) -> Segmentation:
    """AISRM, or a pass-through when it is disabled or there is nothing to refine."""
    if not cfg.use_aisrm or len(seg) == 0:
        return seg
    if isinstance(observations, AudioIntensityMap):
        intensity = observations
    else:
        intensity = accumulate_intensity(cloud, observations)
    return refine(cloud, seg, intensity, cfg.refinement)


def eval_frames(n: int, split: str) -> list[int]:
    return list(range(n)) if split == "all" else split_indices(n)[1]


def eval_stage(cloud: GaussianCloud, seg: Segmentation, poses: Sequence[CameraPose],
               gt_masks: Sequence[MaskImage], cfg: PipelineConfig = PipelineConfig()) -> Metrics:
    if len(poses) != len(gt_masks):
        raise InputError(f"{len(poses)} poses but {len(gt_masks)} ground-truth masks")
    frames = [(poses[i], gt_masks[i]) for i in eval_frames(len(poses), cfg.eval_split)]
    return evaluate(cloud, seg, frames, cfg.render, cfg.evaluation)


@dataclass(eq=False)
class PipelineResult:
    lifted: Segmentation
    refined: Segmentation
    metrics: Metrics


def run(cloud: GaussianCloud, poses: Sequence[CameraPose], pred_masks: Sequence[MaskImage],
        gt_masks: Sequence[MaskImage], observations: Sequence[RmsObservation],
        cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    lifted = lift(cloud, list(zip(poses, pred_masks)), cfg)
    refined = refine_stage(cloud, lifted, observations, cfg)
    return PipelineResult(lifted, refined, eval_stage(cloud, refined, poses, gt_masks, cfg))


def sweep_tau(cloud: GaussianCloud, poses, pred_masks, gt_masks, observations,
              taus: Sequence[float], cfg: PipelineConfig = PipelineConfig()) -> dict:
    """Re-run refine + eval for each voting threshold, sharing the vote tally."""
    tally = tally_votes(cloud, list(zip(poses, pred_masks)))
    intensity = accumulate_intensity(cloud, observations) if cfg.use_aisrm else None
    out = {}
    for tau in taus:
        run_cfg = PipelineConfig(**{**cfg.to_dict(), "tau_voting": float(tau)})
        lifted = tally.select(run_cfg.tau_voting)
        refined = refine_stage(cloud, lifted, intensity, run_cfg) if cfg.use_aisrm else lifted
        out[float(tau)] = PipelineResult(lifted, refined,
                                         eval_stage(cloud, refined, poses, gt_masks, run_cfg))
    return out
