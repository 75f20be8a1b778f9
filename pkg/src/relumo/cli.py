"""Command-line entry points.

Exit codes: 0 success, 1 usage / bad paths, 2 numerical failure
(divergence, degenerate systems).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .imaging import Image, load_image, load_mask, save_image, save_mask, save_png
from .decompose import (
    DecomposeInit,
    DivergenceError,
    OptimizerConfig,
    decompose,
    load_decomposition,
    save_decomposition,
)
from .geometry import cross_project, load_cameras
from .metrics import evaluate_cross_relighting, write_eval_csv
from .relight import RelightRequest, relight
from .shlight import EnvMap, ShLighting, fit_envmap_lighting, rotate_lighting


def _apply_thread_cap():
    cap = os.environ.get("RELUMO_THREADS")
    if cap:
        try:
            import cv2

            cv2.setNumThreads(max(1, int(cap)))
        except (ValueError, ImportError):
            pass


def _load_align(path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    vals = doc["R"] if isinstance(doc, dict) else doc
    return np.array(vals, dtype=np.float64).reshape(3, 3)


@click.group()
def cli():
    """Decompose outdoor photographs and relight them under new lighting."""


@cli.command("decompose")
@click.option("--image", "image_path", required=True, help="input photograph (PNG/PFM/HDR)")
@click.option("--mask", "mask_path", required=True, help="foreground (non-sky) mask PNG")
@click.option("--out", "out_dir", required=True, help="output decomposition directory")
@click.option("--cameras", "cameras_path", default=None, help="cameras.json for this scene")
@click.option("--view", "view_index", type=int, default=None, help="index of this image in cameras.json")
@click.option("--neighbors", default=None, help="comma-separated neighbor view indices")
@click.option("--iters", type=int, default=2000)
@click.option("--step", type=float, default=1e-2)
@click.option("--lambda-albedo", type=float, default=0.0)
@click.option("--lambda-shadow", type=float, default=0.0)
@click.option("--seed", type=int, default=0)
def cmd_decompose(image_path, mask_path, out_dir, cameras_path, view_index,
                  neighbors, iters, step, lambda_albedo, lambda_shadow, seed):
    """Decompose one image into albedo, normals, shadow, lighting, residual."""
    np.random.seed(seed)
    img = load_image(image_path)
    mask = load_mask(mask_path)
    init = DecomposeInit()
    neighbor_views = None
    if cameras_path is not None:
        records = load_cameras(cameras_path)
        if view_index is None or not (0 <= view_index < len(records)):
            raise click.UsageError("--view must index into --cameras")
        init.camera = records[view_index].view
        if neighbors:
            base = Path(cameras_path).parent
            neighbor_views = []
            for tok in neighbors.split(","):
                rec = records[int(tok)]
                neighbor_views.append((load_image(base / rec.image_file), rec.view))
    cfg = OptimizerConfig(
        iterations=iters,
        step_size=step,
        lambda_albedo=lambda_albedo,
        lambda_shadow=lambda_shadow,
    )
    d = decompose(img, mask, init=init, cfg=cfg, neighbors=neighbor_views)
    manifest = {
        "seed": seed,
        "config": {
            "iterations": iters,
            "step_size": step,
            "lambda_albedo": lambda_albedo,
            "lambda_shadow": lambda_shadow,
        },
    }
    save_decomposition(d, out_dir, manifest)
    click.echo(f"decomposition written to {out_dir} (final loss {d.trace[-1][1]:.6g})")


@cli.command("relight")
@click.option("--decomp", "decomp_dir", required=True, help="decomposition directory")
@click.option("--sh", "sh_path", default=None, help="target lighting.json")
@click.option("--envmap", "envmap_path", default=None, help="target environment map (HDR/PFM)")
@click.option("--align", "align_path", default=None, help="env-map alignment rotation JSON")
@click.option("--shadow", "shadow_mode", type=click.Choice(["none", "geometric", "keep-original"]), default="none")
@click.option("--use-residual", is_flag=True, default=False)
@click.option("--sky", "sky_fill", type=click.Choice(["black", "original", "flat-color"]), default="flat-color")
@click.option("--cameras", "cameras_path", default=None, help="cameras.json supplying depth for cast shadows")
@click.option("--view", "view_index", type=int, default=None)
@click.option("--out", "out_path", required=True)
@click.option("--seed", type=int, default=0)
def cmd_relight(decomp_dir, sh_path, envmap_path, align_path, shadow_mode,
                use_residual, sky_fill, cameras_path, view_index, out_path, seed):
    """Relight a stored decomposition under target SH or env-map lighting."""
    np.random.seed(seed)
    if (sh_path is None) == (envmap_path is None):
        raise click.UsageError("exactly one of --sh / --envmap is required")
    d = load_decomposition(decomp_dir)
    if sh_path is not None:
        target = ShLighting.from_json(Path(sh_path).read_text())
    else:
        align = _load_align(align_path) if align_path else np.eye(3)
        target = EnvMap(load_image(envmap_path), align)
    camera = None
    if cameras_path is not None:
        records = load_cameras(cameras_path)
        if view_index is None or not (0 <= view_index < len(records)):
            raise click.UsageError("--view must index into --cameras")
        camera = records[view_index].view
    req = RelightRequest(
        decomposition=d,
        target=target,
        use_residual=use_residual,
        shadow_mode=shadow_mode.replace("-", "_"),
        sky_fill=sky_fill.replace("-", "_"),
        cast_shadows=camera is not None,
        camera=camera,
    )
    out = relight(req)
    if Path(out_path).suffix.lower() == ".png":
        save_png(out, out_path, bits=8)
    else:
        save_image(out, out_path)
    click.echo(f"relit image written to {out_path}")


@cli.command("fit-envmap")
@click.option("--envmap", "envmap_path", required=True)
@click.option("--align", "align_path", default=None)
@click.option("--out", "out_path", required=True, help="output lighting.json")
@click.option("--seed", type=int, default=0)
def cmd_fit_envmap(envmap_path, align_path, out_path, seed):
    """Fit order-2 SH lighting to an environment map."""
    np.random.seed(seed)
    align = _load_align(align_path) if align_path else np.eye(3)
    env = EnvMap(load_image(envmap_path), align)
    lighting = rotate_lighting(fit_envmap_lighting(env), env.alignment)
    Path(out_path).write_text(lighting.to_json())
    click.echo(f"lighting written to {out_path}")


@cli.command("cross-project")
@click.option("--cameras", "cameras_path", required=True)
@click.option("--src", "src_index", type=int, required=True)
@click.option("--dst", "dst_index", type=int, required=True)
@click.option("--image", "image_path", default=None, help="override the src record's image")
@click.option("--out", "out_path", required=True)
@click.option("--mask-out", "mask_out", default=None)
@click.option("--seed", type=int, default=0)
def cmd_cross_project(cameras_path, src_index, dst_index, image_path, out_path, mask_out, seed):
    """Warp the src view's image into the dst view's pixel grid."""
    np.random.seed(seed)
    records = load_cameras(cameras_path)
    for idx in (src_index, dst_index):
        if not (0 <= idx < len(records)):
            raise click.UsageError(f"view index {idx} outside cameras.json")
    base = Path(cameras_path).parent
    src_img = load_image(image_path or base / records[src_index].image_file)
    warped, mask = cross_project(src_img, records[src_index].view, records[dst_index].view)
    save_image(warped, out_path)
    if mask_out:
        save_mask(mask, mask_out)
    click.echo(f"cross projection written to {out_path}")


@cli.command("evaluate")
@click.option("--scene", "scene_dir", required=True, help="scene directory with cameras.json")
@click.option("--outputs", "outputs_dir", required=True, help="method outputs directory")
@click.option("--out", "out_csv", required=True)
@click.option("--reports", "report_dir", default=None, help="write per-pair JSON reports here")
@click.option("--seed", type=int, default=0)
def cmd_evaluate(scene_dir, outputs_dir, out_csv, report_dir, seed):
    """Score relit outputs against cross-projected ground truth."""
    np.random.seed(seed)
    rows, missing = evaluate_cross_relighting(scene_dir, outputs_dir, report_dir)
    write_eval_csv(rows, out_csv)
    for name in missing:
        click.echo(f"missing output: {name}", err=True)
    click.echo(f"evaluation table written to {out_csv}")


@cli.command("serve")
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--store", "store_root", default=None, help="session store directory")
@click.option("--preload", multiple=True, help="decomposition directories to load as sessions")
@click.option("--iters", "default_iters", type=int, default=300)
def cmd_serve(port, host, store_root, preload, default_iters):
    """Run the local relighting service."""
    import uvicorn

    from .service import create_app

    app = create_app(store_root, default_iters, list(preload))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    _apply_thread_cap()
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError, IOError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DivergenceError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        for it, loss in exc.trace[-5:]:
            click.echo(f"  iteration {it}: loss {loss:.6g}", err=True)
        return 2
    except (ValueError, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
