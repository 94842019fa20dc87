"""HTTP service exposing the grasp-selection pipeline.

Endpoints wrap the core package one-to-one: /select runs the full pipeline
on a scene, /evaluate and /sweep-k run the harness over a corpus, /views
does view selection first, and /render-debug returns the annotated query
bundle without contacting any model. Errors come back as a structured
``{"error": tag, "message": ...}`` body so clients can map them to exit
codes.

Scene and corpus paths are resolved on the server's filesystem; the service
is meant to run next to its data (or in-process via an ASGI transport, as
the bundled CLI does).
"""

from __future__ import annotations

import base64
from dataclasses import replace
from typing import Literal

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import harness
from .clustering import ClusterConfig
from .corpus import build_corpus, load_manifest
from .errors import (AuthError, ConfigError, GraspSelectError, ModelError,
                     ParseError, TransportError, VlmTimeout)
from .harness import (ALL_STRATEGIES, AdversarialPolicy, HarnessConfig,
                      OmniscientPolicy, compare_k_sweep, prepare_trial,
                      run_trials, sweep_to_csv)
from .prompting import Strategy, build_query, encode_png
from .scenes import SceneDescription, TaskSpec, load_scene
from .vlm import HttpVlm, ScriptedVlm, VlmEndpointConfig, select_grasp
from .viewselect import StubDetector, score_views, select_view


class TaskModel(BaseModel):
    description: str
    category: Literal["specific-position", "tool-use", "handover"]
    target_region: str
    polarity: Literal["require", "avoid"] = "require"
    target_object: str = ""

    def to_spec(self) -> TaskSpec:
        return TaskSpec(description=self.description, category=self.category,
                        target_region=self.target_region,
                        polarity=self.polarity,
                        target_object=self.target_object)


class ClusterModel(BaseModel):
    k: int | Literal["auto"] = 3
    seed: int = 0
    auto_k_min: int = 2
    auto_k_max: int = 8

    def to_config(self) -> ClusterConfig:
        return ClusterConfig(k=self.k, seed=self.seed,
                             auto_k_range=(self.auto_k_min, self.auto_k_max))


class BackendModel(BaseModel):
    kind: Literal["scripted", "http", "omniscient", "adversarial"]
    path: str = ""  # scripted rules file
    base_url: str = ""
    model_name: str = ""
    api_key_env_var_name: str = ""
    timeout_seconds: float = 60.0
    max_retries: int = 3
    retry_backoff_seconds: float = 1.0

    def resolve(self):
        if self.kind == "scripted":
            if not self.path:
                raise ConfigError("scripted backend needs a rules file path")
            return ScriptedVlm.from_file(self.path)
        if self.kind == "http":
            if not self.base_url:
                raise ConfigError("http backend needs a base_url")
            return HttpVlm(VlmEndpointConfig(
                base_url=self.base_url, model_name=self.model_name,
                api_key_env_var_name=self.api_key_env_var_name,
                timeout_seconds=self.timeout_seconds,
                max_retries=self.max_retries,
                retry_backoff_seconds=self.retry_backoff_seconds))
        if self.kind == "omniscient":
            return OmniscientPolicy()
        return AdversarialPolicy()


class SelectRequest(BaseModel):
    scene_path: str
    strategy: Literal["GSI", "CPSI", "GMI", "CPMI", "CPG"]
    backend: BackendModel
    task: TaskModel | None = None  # default: the task embedded in the scene
    cluster: ClusterModel = Field(default_factory=ClusterModel)
    seed: int = 0
    n_candidates: int = 200
    view_index: int = 0
    include_images: bool = True


class ChosenGrasp(BaseModel):
    id: int
    confidence: float
    contact: list[float]
    rotation: list[float]
    translation: list[float]


class SelectResponse(BaseModel):
    chosen: ChosenGrasp
    audit: dict
    prompt: str
    candidate_order: list[int]
    images_png_b64: list[str]


class EvaluateRequest(BaseModel):
    manifest_path: str
    backend: BackendModel
    strategies: list[str] = Field(
        default_factory=lambda: [s.value for s in ALL_STRATEGIES])
    cluster: ClusterModel = Field(default_factory=ClusterModel)
    seed: int = 0
    n_candidates: int = 200
    include_baseline: bool = True


class EvaluateResponse(BaseModel):
    report: dict
    csv: str


class SweepKRequest(BaseModel):
    manifest_path: str
    backend: BackendModel
    k_values: list[int]
    seed: int = 0
    n_candidates: int = 200


class SweepKResponse(BaseModel):
    rows: list[dict]
    csv: str


class ViewScore(BaseModel):
    view_index: int
    confidence: float
    failed: bool


class ViewsResponse(BaseModel):
    scores: list[ViewScore]
    selected_view: int
    result: SelectResponse


class RenderDebugRequest(BaseModel):
    scene_path: str
    strategy: Literal["GSI", "CPSI", "GMI", "CPMI", "CPG"]
    task: TaskModel | None = None
    cluster: ClusterModel = Field(default_factory=ClusterModel)
    seed: int = 0
    n_candidates: int = 200
    view_index: int = 0


class RenderDebugResponse(BaseModel):
    prompt: str
    candidate_order: list[int]
    images_png_b64: list[str]


class MakeCorpusRequest(BaseModel):
    out_dir: str
    image_width: int = 320
    image_height: int = 240


_STATUS_BY_TAG = {
    ConfigError.tag: 400,
    ParseError.tag: 400,
    AuthError.tag: 502,
    TransportError.tag: 502,
    VlmTimeout.tag: 502,
    ModelError.tag: 502,
}


def create_app() -> FastAPI:
    app = FastAPI(title="graspselect", version="0.1.0")

    @app.exception_handler(GraspSelectError)
    async def _handle(request, exc: GraspSelectError):
        status = _STATUS_BY_TAG.get(exc.tag, 422)
        return JSONResponse(status_code=status,
                            content={"error": exc.tag, "message": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    def _load_scene(path: str, task: TaskModel | None) -> SceneDescription:
        scene = load_scene(path)
        if task is not None:
            scene = replace(scene, task=task.to_spec())
        if scene.task is None:
            raise ConfigError("no task: scene file has none and request gave none")
        return scene

    def _harness_cfg(req) -> HarnessConfig:
        return HarnessConfig(seed=req.seed, n_candidates=req.n_candidates,
                             cluster=req.cluster.to_config())

    def _run_select(scene: SceneDescription, req: SelectRequest,
                    view_index: int) -> SelectResponse:
        cfg = _harness_cfg(req)
        scene_seed = cfg.seed * 10007
        obs, cloud, obj, filtered, reps = prepare_trial(
            scene, cfg, scene_seed, view_index=view_index)
        ctx = harness.TrialContext(scene=scene, task=scene.task, obj=obj,
                                   reps=reps, cloud=cloud, observation=obs)
        backend = harness._resolve_backend(req.backend.resolve(), ctx)
        strategy = Strategy(req.strategy)
        chosen, audit = select_grasp(
            obs.rgb, reps, scene.task.description, strategy, backend,
            obs.intrinsics, cloud=cloud, grip=cfg.grip,
            world_from_camera=obs.world_from_camera, cfg=cfg.select)
        bundle = build_query(obs.rgb, reps, scene.task.description, strategy,
                             obs.intrinsics, grip=cfg.grip,
                             world_from_camera=obs.world_from_camera)
        images = []
        if req.include_images:
            images = [base64.b64encode(encode_png(img)).decode("ascii")
                      for img in bundle.images]
        return SelectResponse(
            chosen=ChosenGrasp(
                id=chosen.id, confidence=chosen.confidence,
                contact=[float(v) for v in chosen.contact],
                rotation=[float(v) for v in chosen.pose.rotation.ravel()],
                translation=[float(v) for v in chosen.pose.translation]),
            audit=audit.to_dict(), prompt=bundle.prompt,
            candidate_order=list(bundle.candidate_order),
            images_png_b64=images)

    @app.post("/select", response_model=SelectResponse)
    def select(req: SelectRequest) -> SelectResponse:
        scene = _load_scene(req.scene_path, req.task)
        return _run_select(scene, req, req.view_index)

    @app.post("/views", response_model=ViewsResponse)
    def views(req: SelectRequest) -> ViewsResponse:
        scene = _load_scene(req.scene_path, req.task)
        scores = score_views(scene, scene.task.description, StubDetector())
        chosen_view = select_view(scores)
        result = _run_select(scene, req, chosen_view)
        return ViewsResponse(
            scores=[ViewScore(view_index=s.view_index, confidence=s.confidence,
                              failed=s.failed) for s in scores],
            selected_view=chosen_view, result=result)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        scene_paths = load_manifest(req.manifest_path)
        scenes = [load_scene(p) for p in scene_paths]
        cfg = replace(_harness_cfg(req), include_baseline=req.include_baseline)
        report, _ = run_trials(scenes, req.strategies, req.backend.resolve(),
                               cfg)
        return EvaluateResponse(report=report.to_dict(), csv=report.to_csv())

    @app.post("/sweep-k", response_model=SweepKResponse)
    def sweep_k(req: SweepKRequest) -> SweepKResponse:
        scene_paths = load_manifest(req.manifest_path)
        scenes = [load_scene(p) for p in scene_paths]
        cfg = HarnessConfig(seed=req.seed, n_candidates=req.n_candidates)
        rows = compare_k_sweep(scenes, req.k_values, req.backend.resolve(), cfg)
        return SweepKResponse(rows=rows, csv=sweep_to_csv(rows))

    @app.post("/render-debug", response_model=RenderDebugResponse)
    def render_debug(req: RenderDebugRequest) -> RenderDebugResponse:
        scene = _load_scene(req.scene_path, req.task)
        cfg = _harness_cfg(req)
        obs, cloud, obj, filtered, reps = prepare_trial(
            scene, cfg, cfg.seed * 10007, view_index=req.view_index)
        bundle = build_query(obs.rgb, reps, scene.task.description,
                             Strategy(req.strategy), obs.intrinsics,
                             grip=cfg.grip,
                             world_from_camera=obs.world_from_camera)
        return RenderDebugResponse(
            prompt=bundle.prompt,
            candidate_order=list(bundle.candidate_order),
            images_png_b64=[base64.b64encode(encode_png(img)).decode("ascii")
                            for img in bundle.images])

    @app.post("/make-corpus")
    def make_corpus(req: MakeCorpusRequest) -> dict:
        manifest = build_corpus(req.out_dir, req.image_width, req.image_height)
        return {"manifest_path": str(manifest)}

    return app


app = create_app()
