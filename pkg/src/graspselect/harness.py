"""Offline evaluation: run the pipeline over labeled scenes and score it.

Three metrics are reported per strategy: grasp success (an analytic
antipodal proxy instead of physics), task compliance (chosen contact inside
the task's labeled region) and their per-trial conjunction. A
confidence-top-1 baseline runs alongside every evaluation.

The oracle backends answer queries from scene ground truth: the omniscient
one always names a compliant grasp when one is on offer, the adversarial
one does the opposite. They make end-to-end behavior checkable without any
real model.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .candidates import (CandidateSet, FeasibilityConfig, GraspCandidate,
                         feasibility_filter, generate_synthetic, top_k)
from .clustering import ClusterConfig, diversify, diversify_nested
from .errors import GraspSelectError
from .geometry import GraspPose, GripperGeometry, PointCloud, unproject
from .primitives import PrimitiveObject
from .prompting import Strategy
from .scenes import SceneDescription, SceneObservation, TaskSpec, render_view
from .vlm import AuditRecord, QueryBundle, SelectConfig, select_grasp

ALL_STRATEGIES = (Strategy.GSI, Strategy.CPSI, Strategy.GMI,
                  Strategy.CPMI, Strategy.CPG)
CLUSTERING_STRATEGIES = (Strategy.GSI, Strategy.CPSI, Strategy.GMI,
                         Strategy.CPMI)
BASELINE = "baseline"


# --- scoring ----------------------------------------------------------------

def check_compliance(chosen: GraspCandidate, task: TaskSpec,
                     obj: PrimitiveObject) -> bool:
    """Is the chosen contact inside (or, for avoid-polarity, outside) the
    task's labeled region? Contacts are world-frame; the region volume is
    closed, so a contact exactly on the surface counts as inside."""
    contact_obj = obj.pose.inverse().transform(chosen.contact)
    inside = bool(obj.region_contains(task.target_region, contact_obj)[0])
    return inside if task.polarity == "require" else not inside


def grasp_success_proxy(chosen: GraspCandidate, obj: PrimitiveObject,
                        grip: GripperGeometry | None = None,
                        max_normal_angle_deg: float = 15.0,
                        contact_margin: float = 0.005) -> bool:
    """Analytic necessary conditions for a lift, replacing simulation:
    jaw span fits the local width, the closing axis is antipodal to the
    local surface normals, and the contact sits on (or just inside) the
    object."""
    grip = grip or GripperGeometry()
    inv = obj.pose.inverse()
    contact = inv.transform(chosen.contact)
    closing = inv.rotation @ chosen.pose.closing_axis
    if float(obj.sdf(contact)[0]) > contact_margin:
        return False
    span = obj.width_through(contact, closing)
    if span is None:
        return False
    width, t_enter, t_exit = span
    if width > grip.max_width:
        return False
    p_enter = contact + t_enter * closing
    p_exit = contact + t_exit * closing
    n_enter, n_exit = obj.normals(np.vstack([p_enter, p_exit]))
    cos_max = math.cos(math.radians(max_normal_angle_deg))
    if float(np.dot(n_exit, closing)) < cos_max:
        return False
    if float(np.dot(n_enter, -closing)) < cos_max:
        return False
    return True


# --- oracle backends --------------------------------------------------------

@dataclass(frozen=True)
class TrialContext:
    """Ground truth handed to oracle backends for one trial."""

    scene: SceneDescription
    task: TaskSpec
    obj: PrimitiveObject
    reps: CandidateSet
    cloud: PointCloud  # camera frame
    observation: SceneObservation

    def compliant_flags(self) -> list[bool]:
        return [check_compliance(c, self.task, self.obj) for c in self.reps]


class OracleBackend:
    """Scripted responder that reads trial ground truth.

    ``invert=False`` is the omniscient script (prefers compliant grasps);
    ``invert=True`` the adversarial one (prefers non-compliant grasps).
    """

    def __init__(self, ctx: TrialContext, invert: bool = False):
        self._ctx = ctx
        self._invert = invert

    def _wanted(self, flags: list[bool]) -> list[int]:
        want = [i for i, f in enumerate(flags) if f != self._invert]
        return want if want else list(range(len(flags)))

    def complete(self, bundle: QueryBundle) -> str:
        ctx = self._ctx
        if bundle.strategy is Strategy.CPG:
            return self._cpg_reply()
        flags = {c.id: f for c, f in zip(ctx.reps, ctx.compliant_flags())}
        order_flags = [flags[cid] for cid in bundle.candidate_order]
        choice = self._wanted(order_flags)[0]
        return json.dumps({"choice": choice + 1})

    def _cpg_reply(self) -> str:
        ctx = self._ctx
        pose = ctx.observation.world_from_camera
        pts_w = pose.transform(ctx.cloud.points)
        contacts = ctx.reps.contacts()
        d = np.linalg.norm(pts_w[:, None, :] - contacts[None, :, :], axis=2)
        nearest_rep = np.argmin(d, axis=1)
        nearest_d = d[np.arange(len(d)), nearest_rep]
        flags = ctx.compliant_flags()
        eligible = np.array([flags[r] != self._invert for r in nearest_rep])
        if not eligible.any():
            eligible = np.ones(len(pts_w), dtype=bool)
        pick = int(np.flatnonzero(eligible)[np.argmin(nearest_d[eligible])])
        u, v = ctx.cloud.pixels[pick]
        return json.dumps({"point": [float(u), float(v)]})


@dataclass(frozen=True)
class OmniscientPolicy:
    def make_backend(self, ctx: TrialContext) -> OracleBackend:
        return OracleBackend(ctx, invert=False)


@dataclass(frozen=True)
class AdversarialPolicy:
    def make_backend(self, ctx: TrialContext) -> OracleBackend:
        return OracleBackend(ctx, invert=True)


def _resolve_backend(backend, ctx: TrialContext):
    if hasattr(backend, "make_backend"):
        return backend.make_backend(ctx)
    return backend


# --- trials -----------------------------------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    seed: int = 0
    n_candidates: int = 200
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    grip: GripperGeometry = field(default_factory=GripperGeometry)
    feasibility: FeasibilityConfig = field(default_factory=FeasibilityConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    nested_clustering: bool = False
    include_baseline: bool = True


@dataclass(frozen=True)
class TrialOutcome:
    trial_id: int
    scene: str
    category: str
    strategy: str
    grasp_success: bool
    task_compliant: bool
    chosen_id: int
    error: str = ""

    @property
    def combined(self) -> bool:
        return self.grasp_success and self.task_compliant

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "scene": self.scene,
                "category": self.category, "strategy": self.strategy,
                "grasp_success": self.grasp_success,
                "task_compliant": self.task_compliant,
                "chosen_id": self.chosen_id, "error": self.error}


def _rates(outcomes: list[TrialOutcome]) -> dict:
    n = len(outcomes)
    if n == 0:
        return {"grasp_success_rate": 0.0, "task_compliance_rate": 0.0,
                "combined_success_rate": 0.0, "trials": 0}
    g = sum(o.grasp_success for o in outcomes)
    t = sum(o.task_compliant for o in outcomes)
    c = sum(o.combined for o in outcomes)  # per-trial conjunction, not a product
    return {"grasp_success_rate": g / n, "task_compliance_rate": t / n,
            "combined_success_rate": c / n, "trials": n}


@dataclass(frozen=True)
class EvaluationReport:
    outcomes: tuple[TrialOutcome, ...]

    def overall(self) -> dict:
        return _rates(list(self.outcomes))

    def by_strategy(self) -> dict[str, dict]:
        keys = sorted({o.strategy for o in self.outcomes})
        return {k: _rates([o for o in self.outcomes if o.strategy == k])
                for k in keys}

    def by_category(self) -> dict[str, dict]:
        keys = sorted({o.category for o in self.outcomes})
        return {k: _rates([o for o in self.outcomes if o.category == k])
                for k in keys}

    def to_dict(self) -> dict:
        return {"overall": self.overall(),
                "by_strategy": self.by_strategy(),
                "by_category": self.by_category(),
                "trials": [o.to_dict() for o in self.outcomes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["strategy", "grasp_success_rate",
                         "task_compliance_rate", "combined_success_rate",
                         "trials"])
        for name, r in self.by_strategy().items():
            writer.writerow([name, f"{r['grasp_success_rate']:.6f}",
                             f"{r['task_compliance_rate']:.6f}",
                             f"{r['combined_success_rate']:.6f}", r["trials"]])
        return buf.getvalue()


@dataclass(frozen=True)
class TrialArtifacts:
    """Per-trial details kept for audit dumps."""

    outcome: TrialOutcome
    audit: AuditRecord | None


def prepare_trial(scene: SceneDescription, cfg: HarnessConfig,
                  scene_seed: int, view_index: int = 0,
                  k_override: int | None = None):
    """Shared pipeline front half: observe, generate, filter, diversify."""
    obs = render_view(scene, view_index)
    cloud = unproject(obs.depth, obs.intrinsics)
    obj = scene.target_object()
    cands = generate_synthetic(obj, cfg.n_candidates, seed=scene_seed,
                               grip=cfg.grip)
    filtered = feasibility_filter(cands, scene.workspace, grip=cfg.grip,
                                  cfg=cfg.feasibility)
    if len(filtered) == 0:
        raise GraspSelectError("all candidates removed by feasibility filter")
    ccfg = cfg.cluster if k_override is None \
        else replace(cfg.cluster, k=k_override)
    if cfg.nested_clustering and ccfg.k != "auto":
        _, reps = diversify_nested(filtered, int(ccfg.k))
    else:
        _, reps = diversify(filtered, ccfg)
    return obs, cloud, obj, filtered, reps


def run_trials(scenes: list[SceneDescription], strategies, backend,
               cfg: HarnessConfig | None = None,
               k_override: int | None = None) -> tuple[EvaluationReport, list[TrialArtifacts]]:
    """Full pipeline per (scene, strategy); errors become failed trials.

    ``backend`` is either a plain VLM backend or an oracle policy exposing
    ``make_backend(ctx)``. The baseline row (confidence top-1) is appended
    unless disabled.
    """
    cfg = cfg or HarnessConfig()
    strategies = [Strategy(s) for s in strategies]
    artifacts: list[TrialArtifacts] = []
    trial_id = 0
    for si, scene in enumerate(scenes):
        task = scene.task
        if task is None:
            raise GraspSelectError(f"scene {scene.name!r} has no task")
        scene_seed = cfg.seed * 10007 + si
        try:
            obs, cloud, obj, filtered, reps = prepare_trial(
                scene, cfg, scene_seed, k_override=k_override)
        except GraspSelectError as e:
            for strategy in strategies:
                artifacts.append(TrialArtifacts(TrialOutcome(
                    trial_id=trial_id, scene=scene.name, category=task.category,
                    strategy=strategy.value, grasp_success=False,
                    task_compliant=False, chosen_id=-1, error=e.tag), None))
                trial_id += 1
            continue
        ctx = TrialContext(scene=scene, task=task, obj=obj, reps=reps,
                           cloud=cloud, observation=obs)
        for strategy in strategies:
            try:
                chosen, audit = select_grasp(
                    obs.rgb, reps, task.description, strategy,
                    _resolve_backend(backend, ctx), obs.intrinsics,
                    cloud=cloud, grip=cfg.grip,
                    world_from_camera=obs.world_from_camera,
                    cfg=cfg.select)
                outcome = TrialOutcome(
                    trial_id=trial_id, scene=scene.name,
                    category=task.category, strategy=strategy.value,
                    grasp_success=grasp_success_proxy(chosen, obj, cfg.grip),
                    task_compliant=check_compliance(chosen, task, obj),
                    chosen_id=chosen.id)
                artifacts.append(TrialArtifacts(outcome, audit))
            except GraspSelectError as e:
                artifacts.append(TrialArtifacts(TrialOutcome(
                    trial_id=trial_id, scene=scene.name, category=task.category,
                    strategy=strategy.value, grasp_success=False,
                    task_compliant=False, chosen_id=-1, error=e.tag), None))
            trial_id += 1
        if cfg.include_baseline:
            chosen = top_k(filtered, 1)[0]
            artifacts.append(TrialArtifacts(TrialOutcome(
                trial_id=trial_id, scene=scene.name, category=task.category,
                strategy=BASELINE,
                grasp_success=grasp_success_proxy(chosen, obj, cfg.grip),
                task_compliant=check_compliance(chosen, task, obj),
                chosen_id=chosen.id), None))
            trial_id += 1
    report = EvaluationReport(outcomes=tuple(a.outcome for a in artifacts))
    return report, artifacts


def compare_k_sweep(scenes: list[SceneDescription], k_values: list[int],
                    backend, cfg: HarnessConfig | None = None,
                    strategies=CLUSTERING_STRATEGIES) -> list[dict]:
    """Per-K metric rows over the clustering-dependent strategies.

    Uses nested-refinement clustering so that the candidate pool only grows
    with K. No trend is asserted here; the rows are for tables and plots.
    """
    cfg = cfg or HarnessConfig()
    if sorted(k_values) != list(k_values):
        raise GraspSelectError("k_values must be ascending")
    cfg = replace(cfg, nested_clustering=True, include_baseline=False)
    rows = []
    for k in k_values:
        report, _ = run_trials(scenes, strategies, backend, cfg, k_override=k)
        row = {"k": k}
        row.update({key: val for key, val in report.overall().items()})
        rows.append(row)
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "grasp_success_rate", "task_compliance_rate",
                     "combined_success_rate", "trials"])
    for row in rows:
        writer.writerow([row["k"], f"{row['grasp_success_rate']:.6f}",
                         f"{row['task_compliance_rate']:.6f}",
                         f"{row['combined_success_rate']:.6f}", row["trials"]])
    return buf.getvalue()
