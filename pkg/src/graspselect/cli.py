"""Command-line client for the grasp-selection service.

The CLI is a thin HTTP client: with ``--server`` it talks to a running
service, otherwise it mounts the FastAPI app in-process over an ASGI
transport, so every command also works offline and deterministically.

Exit codes (stable, for shell-level scripting):
    0  success
    2  ConfigError / bad arguments
    3  ParseError (malformed scene, grasp or manifest file)
    4  NoGraspExists / TooFewPoints / EmptyInput
    5  VlmPointOffObject
    6  UnparseableReply / AmbiguousReply / IndexOutOfRange / PointOutOfImage
    7  Timeout / TransportError / AuthError / ModelError
    8  any other pipeline error
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path

import click
import httpx

EXIT_CODES = {
    "ConfigError": 2,
    "ParseError": 3,
    "NoGraspExists": 4,
    "TooFewPoints": 4,
    "EmptyInput": 4,
    "VlmPointOffObject": 5,
    "UnparseableReply": 6,
    "AmbiguousReply": 6,
    "IndexOutOfRange": 6,
    "PointOutOfImage": 6,
    "Timeout": 7,
    "TransportError": 7,
    "AuthError": 7,
    "ModelError": 7,
}
GENERIC_ERROR_EXIT = 8


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app
    return TestClient(app, base_url="http://graspselect.local",
                      raise_server_exceptions=False)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as e:
        click.echo(f"error: TransportError: {e}", err=True)
        sys.exit(EXIT_CODES["TransportError"])
    if resp.status_code >= 400:
        try:
            body = resp.json()
            tag = body.get("error", "Error")
            message = body.get("message", resp.text)
        except json.JSONDecodeError:
            tag, message = "Error", resp.text
        click.echo(f"error: {tag}: {message}", err=True)
        sys.exit(EXIT_CODES.get(tag, GENERIC_ERROR_EXIT))
    return resp.json()


def _load_config(config_path: str | None) -> dict:
    if not config_path:
        return {}
    p = Path(config_path)
    if not p.exists():
        click.echo(f"error: ConfigError: config file not found: {p}", err=True)
        sys.exit(EXIT_CODES["ConfigError"])
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        click.echo(f"error: ConfigError: bad config JSON: {e}", err=True)
        sys.exit(EXIT_CODES["ConfigError"])


def _backend_payload(cfg: dict, backend: str | None) -> dict:
    """Backend from --backend shorthand or from the config file.

    Shorthands: "omniscient", "adversarial", a path to a scripted-rules
    JSON file, or an http(s) URL.
    """
    if backend:
        if backend in ("omniscient", "adversarial"):
            return {"kind": backend}
        if backend.startswith("http://") or backend.startswith("https://"):
            return {"kind": "http", "base_url": backend,
                    "model_name": cfg.get("model_name", "default")}
        return {"kind": "scripted", "path": backend}
    if "backend" in cfg:
        return cfg["backend"]
    click.echo("error: ConfigError: no backend configured "
               "(use --backend or a config file)", err=True)
    sys.exit(EXIT_CODES["ConfigError"])


def _task_payload(cfg: dict, description, category, region, polarity) -> dict | None:
    if description or region:
        if not (description and category and region):
            click.echo("error: ConfigError: a task override needs "
                       "--task-description, --task-category and --task-region",
                       err=True)
            sys.exit(EXIT_CODES["ConfigError"])
        return {"description": description, "category": category,
                "target_region": region, "polarity": polarity}
    return cfg.get("task")


def _write_select_outputs(result: dict, out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chosen = result["chosen"]
    (out / "chosen.json").write_text(json.dumps(chosen, indent=2, sort_keys=True))
    with open(out / "audit.jsonl", "a") as f:
        f.write(json.dumps(result["audit"], sort_keys=True) + "\n")
    (out / "prompt.txt").write_text(result["prompt"])
    (out / "order.json").write_text(json.dumps(
        {"candidate_order": result["candidate_order"]}, indent=2))
    for i, b64 in enumerate(result.get("images_png_b64", [])):
        (out / f"query_{i:02d}.png").write_bytes(base64.b64decode(b64))


def _echo_chosen(result: dict) -> None:
    chosen = result["chosen"]
    c = chosen["contact"]
    click.echo(f"chosen candidate id={chosen['id']} "
               f"confidence={chosen['confidence']:.3f} "
               f"contact=({c[0]:.4f}, {c[1]:.4f}, {c[2]:.4f})")


_common = [
    click.option("--server", default=None,
                 help="Service URL; default runs the service in-process."),
    click.option("--config", "config_path", default=None,
                 help="JSON config file; flags override its values."),
]


def common_options(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@click.group()
def main():
    """Task-oriented grasp selection over a FastAPI service.

    See the module docstring / README for the exit-code table.
    """


@main.command()
@common_options
@click.option("--scene", "scene_path", default=None, help="Scene JSON file.")
@click.option("--strategy", default=None,
              type=click.Choice(["GSI", "CPSI", "GMI", "CPMI", "CPG"]))
@click.option("--backend", default=None,
              help="omniscient | adversarial | scripted-rules file | http(s) URL")
@click.option("--task-description", default=None)
@click.option("--task-category", default=None,
              type=click.Choice(["specific-position", "tool-use", "handover"]))
@click.option("--task-region", default=None)
@click.option("--polarity", default="require",
              type=click.Choice(["require", "avoid"]))
@click.option("--k", default=None, help="Cluster count or 'auto'.")
@click.option("--seed", default=None, type=int)
@click.option("--n-candidates", default=None, type=int)
@click.option("--view-index", default=0, type=int)
@click.option("--out", "out_dir", default="out", show_default=True)
def select(server, config_path, scene_path, strategy, backend,
           task_description, task_category, task_region, polarity,
           k, seed, n_candidates, view_index, out_dir):
    """Run the pipeline on one scene and write the chosen grasp + audit."""
    cfg = _load_config(config_path)
    payload = _select_payload(cfg, scene_path, strategy, backend,
                              task_description, task_category, task_region,
                              polarity, k, seed, n_candidates, view_index)
    with _client(server) as client:
        result = _post(client, "/select", payload)
    _write_select_outputs(result, out_dir)
    _echo_chosen(result)


def _select_payload(cfg, scene_path, strategy, backend, task_description,
                    task_category, task_region, polarity, k, seed,
                    n_candidates, view_index) -> dict:
    scene = scene_path or cfg.get("scene_path")
    if not scene:
        click.echo("error: ConfigError: no scene given", err=True)
        sys.exit(EXIT_CODES["ConfigError"])
    if not Path(scene).exists():
        click.echo(f"error: ConfigError: scene file not found: {scene}", err=True)
        sys.exit(EXIT_CODES["ConfigError"])
    payload = {
        "scene_path": str(scene),
        "strategy": strategy or cfg.get("strategy", "GSI"),
        "backend": _backend_payload(cfg, backend),
        "seed": seed if seed is not None else cfg.get("seed", 0),
        "n_candidates": n_candidates if n_candidates is not None
        else cfg.get("n_candidates", 200),
        "view_index": view_index,
    }
    task = _task_payload(cfg, task_description, task_category, task_region,
                         polarity)
    if task:
        payload["task"] = task
    cluster = dict(cfg.get("cluster", {}))
    if k is not None:
        cluster["k"] = k if k == "auto" else int(k)
    if "seed" not in cluster:
        cluster["seed"] = payload["seed"]
    payload["cluster"] = cluster
    return payload


@main.command()
@common_options
@click.option("--corpus", "manifest_path", required=True,
              help="Corpus manifest JSON.")
@click.option("--backend", default=None)
@click.option("--strategies", default="GSI,CPSI,GMI,CPMI,CPG",
              show_default=True)
@click.option("--k", default=None)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--n-candidates", default=200, type=int, show_default=True)
@click.option("--no-baseline", is_flag=True, default=False)
@click.option("--out", "out_dir", default="out", show_default=True)
def evaluate(server, config_path, manifest_path, backend, strategies, k,
             seed, n_candidates, no_baseline, out_dir):
    """Evaluate all strategies over a scene corpus; write report JSON + CSV."""
    cfg = _load_config(config_path)
    if not Path(manifest_path).exists():
        click.echo(f"error: ConfigError: manifest not found: {manifest_path}",
                   err=True)
        sys.exit(EXIT_CODES["ConfigError"])
    cluster = dict(cfg.get("cluster", {}))
    if k is not None:
        cluster["k"] = k if k == "auto" else int(k)
    cluster.setdefault("seed", seed)
    payload = {
        "manifest_path": str(manifest_path),
        "backend": _backend_payload(cfg, backend),
        "strategies": [s.strip() for s in strategies.split(",") if s.strip()],
        "cluster": cluster,
        "seed": seed,
        "n_candidates": n_candidates,
        "include_baseline": not no_baseline,
    }
    with _client(server) as client:
        result = _post(client, "/evaluate", payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(result["report"], indent=2, sort_keys=True))
    (out / "report.csv").write_text(result["csv"])
    click.echo(result["csv"], nl=False)


@main.command("sweep-k")
@common_options
@click.option("--corpus", "manifest_path", required=True)
@click.option("--backend", default=None)
@click.option("--k-values", default="1,2,3,4,5,6", show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--n-candidates", default=200, type=int, show_default=True)
@click.option("--out", "out_dir", default="out", show_default=True)
def sweep_k(server, config_path, manifest_path, backend, k_values, seed,
            n_candidates, out_dir):
    """Run the clustering strategies at several K values; write a CSV table."""
    cfg = _load_config(config_path)
    payload = {
        "manifest_path": str(manifest_path),
        "backend": _backend_payload(cfg, backend),
        "k_values": [int(v) for v in k_values.split(",") if v.strip()],
        "seed": seed,
        "n_candidates": n_candidates,
    }
    with _client(server) as client:
        result = _post(client, "/sweep-k", payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_k.csv").write_text(result["csv"])
    (out / "sweep_k.json").write_text(
        json.dumps(result["rows"], indent=2, sort_keys=True))
    click.echo(result["csv"], nl=False)


@main.command()
@common_options
@click.option("--scene", "scene_path", default=None,
              help="Multi-view scene JSON file.")
@click.option("--strategy", default=None,
              type=click.Choice(["GSI", "CPSI", "GMI", "CPMI", "CPG"]))
@click.option("--backend", default=None)
@click.option("--task-description", default=None)
@click.option("--task-category", default=None,
              type=click.Choice(["specific-position", "tool-use", "handover"]))
@click.option("--task-region", default=None)
@click.option("--polarity", default="require",
              type=click.Choice(["require", "avoid"]))
@click.option("--k", default=None)
@click.option("--seed", default=None, type=int)
@click.option("--n-candidates", default=None, type=int)
@click.option("--out", "out_dir", default="out", show_default=True)
def views(server, config_path, scene_path, strategy, backend,
          task_description, task_category, task_region, polarity, k, seed,
          n_candidates, out_dir):
    """Score all views, pick the least ambiguous one, then run selection."""
    cfg = _load_config(config_path)
    payload = _select_payload(cfg, scene_path, strategy, backend,
                              task_description, task_category, task_region,
                              polarity, k, seed, n_candidates, 0)
    with _client(server) as client:
        result = _post(client, "/views", payload)
    for s in result["scores"]:
        flag = " (detector failed)" if s["failed"] else ""
        click.echo(f"view {s['view_index']}: confidence {s['confidence']:.3f}{flag}")
    if all(s["confidence"] == 0.0 for s in result["scores"]):
        click.echo("warning: all views scored 0; falling back to view 0", err=True)
    click.echo(f"selected view: {result['selected_view']}")
    _write_select_outputs(result["result"], out_dir)
    _echo_chosen(result["result"])


@main.command("render-debug")
@common_options
@click.option("--scene", "scene_path", required=True)
@click.option("--strategy", required=True,
              type=click.Choice(["GSI", "CPSI", "GMI", "CPMI", "CPG"]))
@click.option("--k", default=None)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--n-candidates", default=200, type=int, show_default=True)
@click.option("--out", "out_dir", default="out", show_default=True)
def render_debug(server, config_path, scene_path, strategy, k, seed,
                 n_candidates, out_dir):
    """Dump the annotated query bundle for a scene without querying a model."""
    cfg = _load_config(config_path)
    if not Path(scene_path).exists():
        click.echo(f"error: ConfigError: scene file not found: {scene_path}",
                   err=True)
        sys.exit(EXIT_CODES["ConfigError"])
    cluster = dict(cfg.get("cluster", {}))
    if k is not None:
        cluster["k"] = k if k == "auto" else int(k)
    cluster.setdefault("seed", seed)
    payload = {"scene_path": str(scene_path), "strategy": strategy,
               "cluster": cluster, "seed": seed, "n_candidates": n_candidates}
    with _client(server) as client:
        result = _post(client, "/render-debug", payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "prompt.txt").write_text(result["prompt"])
    (out / "order.json").write_text(json.dumps(
        {"candidate_order": result["candidate_order"]}, indent=2))
    for i, b64 in enumerate(result["images_png_b64"]):
        (out / f"image_{i:02d}.png").write_bytes(base64.b64decode(b64))
    click.echo(f"wrote {len(result['images_png_b64'])} image(s) to {out}")


@main.command("make-corpus")
@common_options
@click.option("--out", "out_dir", default="corpus", show_default=True)
@click.option("--image-width", default=320, type=int, show_default=True)
@click.option("--image-height", default=240, type=int, show_default=True)
def make_corpus(server, config_path, out_dir, image_width, image_height):
    """Write the built-in 10-scene synthetic corpus and its manifest."""
    payload = {"out_dir": str(out_dir), "image_width": image_width,
               "image_height": image_height}
    with _client(server) as client:
        result = _post(client, "/make-corpus", payload)
    click.echo(f"manifest: {result['manifest_path']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve(host, port):
    """Run the service with uvicorn."""
    import uvicorn
    uvicorn.run("graspselect.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
