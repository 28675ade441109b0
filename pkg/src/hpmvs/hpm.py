"""Coarse-to-fine prior-assisted reconstruction of whole scenes.

A view runs through three phases: plain multi-view PatchMatch, then one
prior-assisted pass per pyramid scale (the planar prior is built from
downsampled hypotheses and lifted back with a joint bilateral upsample
against the full-resolution image), then geometric-consistency rounds
against the other views' current depth maps. The fast variant builds
its single prior at the coarsest scale only.

Stored costs are only comparable within one phase, so every phase
transition rescores the incumbents under the new objective before any
propagation runs.
"""

import time
from dataclasses import dataclass

import numpy as np

from .geometry import scale_camera
from .imaging import (ScalarField, VectorField, downsample,
                      joint_bilateral_upsample)
from .patchmatch import (DEFAULT_LAMBDA_GEOM, DEFAULT_PSI, MAX_COST,
                         DepthNormalMap, PatchmatchState, PropagationConfig,
                         propagate, random_init, refine_pass, run_iterations)
from .prior import PriorConfig, build_prior_model
from .scene import Scene

__all__ = [
    "HpmSchedule",
    "StageStats",
    "ViewRun",
    "SceneRun",
    "run_view",
    "run_scene",
]

VARIANTS = ("full", "fast")


@dataclass(frozen=True)
class HpmSchedule:
    """Pyramid and consistency plan for one reconstruction."""

    scale_factors: tuple = (4, 2, 1)
    variant: str = "full"
    gc_rounds: int = 2
    lambda_geom: float = DEFAULT_LAMBDA_GEOM
    psi: float = DEFAULT_PSI

    def __post_init__(self):
        sf = tuple(int(s) for s in self.scale_factors)
        object.__setattr__(self, "scale_factors", sf)
        if not sf or sf[-1] != 1:
            raise ValueError("scale_factors must end at 1")
        if any(s < 1 for s in sf):
            raise ValueError("scale factors must be positive")
        if any(a <= b for a, b in zip(sf, sf[1:])):
            raise ValueError("scale_factors must be strictly decreasing")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.gc_rounds < 0:
            raise ValueError("gc_rounds must be >= 0")
        if self.lambda_geom < 0 or self.psi <= 0:
            raise ValueError("bad geometric-consistency parameters")

    def prior_scales(self) -> tuple:
        if self.variant == "fast":
            return (self.scale_factors[0],)
        return self.scale_factors


@dataclass(frozen=True)
class StageStats:
    name: str
    seconds: float
    mean_cost: float        # over all pixels, invalid ones sit at MAX_COST
    prior_coverage: float = 0.0


@dataclass
class ViewRun:
    ref_index: int
    state: PatchmatchState
    stages: list

    def current_map(self) -> DepthNormalMap:
        return self.state.snapshot()


@dataclass
class SceneRun:
    maps: list              # final DepthNormalMap per view
    views: list             # ViewRun per view
    manifest: str


def _mean_cost(state) -> float:
    return float(np.mean(state.cost))


def _photo_map(state) -> DepthNormalMap:
    """Hypotheses paired with their pure photometric aggregates; prior
    credibility must never see prior or consistency terms."""
    return DepthNormalMap(depth=state.depth.copy(), normal=state.normal.copy(),
                          cost=state.photo.copy(),
                          valid=state.photo < MAX_COST)


def nesp_stage(state: PatchmatchState, cfg: PropagationConfig) -> StageStats:
    t0 = time.perf_counter()
    run_iterations(state, cfg)
    return StageStats(name="nesp", seconds=time.perf_counter() - t0,
                      mean_cost=_mean_cost(state))


def build_scaled_prior(state: PatchmatchState, scale: int,
                       prior_cfg: PriorConfig):
    """Planar prior from the current hypotheses at one pyramid scale,
    returned at full resolution as (depth SF, normal VF, valid)."""
    full = _photo_map(state)
    camera = state.scene[state.ref_index].camera
    depth_sf = ScalarField(full.depth, full.valid)
    normal_vf = VectorField(full.normal, full.valid)
    cost_sf = ScalarField(full.cost, full.valid)
    if scale > 1:
        depth_sf = downsample(depth_sf, scale)
        normal_vf = downsample(normal_vf, scale)
        cost_sf = downsample(cost_sf, scale)
    coarse = DepthNormalMap(
        depth=depth_sf.values, normal=normal_vf.values, cost=cost_sf.values,
        valid=depth_sf.valid & normal_vf.valid & cost_sf.valid)
    model = build_prior_model(coarse, scale_camera(camera, scale), prior_cfg)
    if scale == 1:
        return (ScalarField(model.depth, model.valid),
                VectorField(np.where(model.valid[..., None], model.normal,
                                     [0.0, 0.0, -1.0]), model.valid),
                model.valid.copy())
    guide = np.asarray(state.ref_img, dtype=np.float64)
    dep = joint_bilateral_upsample(ScalarField(model.depth, model.valid),
                                   guide, scale)
    nor = joint_bilateral_upsample(
        VectorField(np.where(model.valid[..., None], model.normal,
                             [0.0, 0.0, -1.0]), model.valid),
        guide, scale)
    valid = dep.valid & nor.valid
    # The smoothed prior must still be a usable hypothesis: in range and
    # camera facing.
    dmin, dmax = camera.depth_range
    valid &= (dep.values >= dmin) & (dep.values <= dmax)
    Kinv = np.linalg.inv(camera.intrinsics)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    rays = np.stack([Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2],
                     Kinv[1, 1] * ys + Kinv[1, 2],
                     np.ones((camera.height, camera.width))], axis=-1)
    valid &= (nor.values * rays).sum(axis=-1) < -1e-12
    return dep, nor, valid


def prior_stage(state: PatchmatchState, cfg: PropagationConfig, scale: int,
                prior_cfg: PriorConfig) -> StageStats:
    t0 = time.perf_counter()
    dep, nor, valid = build_scaled_prior(state, scale, prior_cfg)
    coverage = float(valid.mean())
    if valid.any():
        state.set_prior(dep.values, nor.values, valid, eta=prior_cfg.eta,
                        gamma=prior_cfg.gamma, sigma_d=prior_cfg.sigma_d,
                        sigma_n=prior_cfg.sigma_n)
        state.prior_backed |= valid
    else:
        state.clear_prior()
    state.rescore()
    run_iterations(state, cfg)
    state.clear_prior()
    return StageStats(name=f"prior-s{scale}",
                      seconds=time.perf_counter() - t0,
                      mean_cost=_mean_cost(state), prior_coverage=coverage)


def gc_stage(state: PatchmatchState, cfg: PropagationConfig,
             schedule: HpmSchedule, source_maps) -> list:
    """Consistency rounds against the given source-view depth maps (one
    per source, in source order; None entries mean no map for that view).
    Returns one StageStats per round."""
    packed = []
    for j, src_index in enumerate(state.src_indices):
        m = source_maps[j]
        if m is None:
            hj, wj = state.src_dims[j]
            packed.append(np.full((int(hj), int(wj)), np.nan))
        else:
            packed.append(np.where(m.valid, m.depth, np.nan))
    state.set_geometric(packed, lambda_geom=schedule.lambda_geom,
                        psi=schedule.psi)
    state.rescore()
    stats = []
    t = cfg.iterations
    for r in range(schedule.gc_rounds):
        t0 = time.perf_counter()
        propagate(state, cfg, t, 0)
        propagate(state, cfg, t, 1)
        refine_pass(state, cfg, t, 0)
        refine_pass(state, cfg, t, 1)
        stats.append(StageStats(name=f"gc-{r + 1}",
                                seconds=time.perf_counter() - t0,
                                mean_cost=_mean_cost(state)))
    return stats


def _final_map(state: PatchmatchState, schedule: HpmSchedule) -> DepthNormalMap:
    snap = state.snapshot()
    if state.use_gc and schedule.gc_rounds > 0:
        valid = state.geo_min() < schedule.psi
    else:
        valid = snap.valid
    return DepthNormalMap(depth=snap.depth, normal=snap.normal,
                          cost=snap.cost, valid=valid)


def run_view(scene: Scene, ref_index: int, cfg: PropagationConfig,
             schedule: HpmSchedule = None, prior_cfg: PriorConfig = None,
             use_prior: bool = True, source_maps=None,
             on_stage=None) -> ViewRun:
    """Full single-view pipeline. `source_maps` (per source view, aligned
    with the state's source order) enables the consistency rounds; leave
    it None when other views have no depth maps yet."""
    if schedule is None:
        schedule = HpmSchedule()
    if prior_cfg is None:
        prior_cfg = PriorConfig()
    state = random_init(scene, ref_index, cfg)
    stages = [nesp_stage(state, cfg)]
    if on_stage:
        on_stage(ref_index, stages[-1])
    if use_prior:
        for scale in schedule.prior_scales():
            stages.append(prior_stage(state, cfg, scale, prior_cfg))
            if on_stage:
                on_stage(ref_index, stages[-1])
    if source_maps is not None and schedule.gc_rounds > 0:
        for st in gc_stage(state, cfg, schedule, source_maps):
            stages.append(st)
            if on_stage:
                on_stage(ref_index, st)
    return ViewRun(ref_index=ref_index, state=state, stages=stages)


def run_scene(scene: Scene, cfg: PropagationConfig,
              schedule: HpmSchedule = None, prior_cfg: PriorConfig = None,
              use_prior: bool = True, on_stage=None) -> SceneRun:
    """Reconstruct every view: photometric phases first for all views,
    then consistency rounds per view against the others' newest maps."""
    if schedule is None:
        schedule = HpmSchedule()
    if prior_cfg is None:
        prior_cfg = PriorConfig()
    runs = []
    for i in range(len(scene)):
        runs.append(run_view(scene, i, cfg, schedule, prior_cfg,
                             use_prior=use_prior, on_stage=on_stage))
    maps = [r.current_map() for r in runs]
    if schedule.gc_rounds > 0 and len(scene) > 1:
        for i, run in enumerate(runs):
            sources = [maps[j] for j in run.state.src_indices]
            for st in gc_stage(run.state, cfg, schedule, sources):
                run.stages.append(st)
                if on_stage:
                    on_stage(i, st)
            maps[i] = _final_map(run.state, schedule)
    manifest = build_manifest(scene, cfg, schedule, use_prior, runs)
    return SceneRun(maps=maps, views=runs, manifest=manifest)


def build_manifest(scene, cfg, schedule, use_prior, runs) -> str:
    lines = [
        f"variant={schedule.variant}",
        "scales=" + ",".join(str(s) for s in schedule.scale_factors),
        f"gc_rounds={schedule.gc_rounds}",
        f"prior={'on' if use_prior else 'off'}",
        f"seed={cfg.seed}",
        f"n_views={len(scene)}",
    ]
    for run in runs:
        name = scene[run.ref_index].name
        for st in run.stages:
            line = (f"view={name} stage={st.name} "
                    f"wall={st.seconds:.3f} mean_cost={st.mean_cost:.6f}")
            if st.name.startswith("prior"):
                line += f" prior_coverage={st.prior_coverage:.4f}"
            lines.append(line)
    return "\n".join(lines) + "\n"
