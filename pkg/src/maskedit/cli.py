"""Command line interface: run edits, sweep benchmarks, serve, or act as a client.

Exit codes: 0 success, 2 invalid input, 3 backend failure.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .attention import AttentionControlConfig, AttentionDumpRecorder, BackgroundPolicy
from .backends import BACKEND_NAMES, create_backend
from .bench import (
    ClipScorer,
    PickScorer,
    ToyScorer,
    ablation_methods,
    load_cases,
    load_methods,
    run_benchmark,
    sample_cases_dir,
    write_report,
)
from .errors import BackendError, InvalidInputError
from .imageio import load_image, save_png
from .masks import MaskSpec, load_mask_png
from .prompts import Role, concat_prompts, encode_prompts
from .sampling import EditRequest, SamplerConfig, resolved_config_dict, run_edit


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InvalidInputError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except BackendError as e:
            click.echo(f"backend error: {e}", err=True)
            sys.exit(3)

    return wrapper


def _parse_int(text: str):
    try:
        return int(text)
    except ValueError:
        return None


def parse_pair(spec: str) -> tuple[str, str, int, int | None]:
    """Parse MASK.png:"PROMPT":ORDER[:GROUP]; the prompt may contain colons."""
    parts = spec.split(":")
    if len(parts) < 3:
        raise InvalidInputError(
            f'--pair must look like MASK.png:"PROMPT":ORDER[:GROUP], got {spec!r}'
        )
    path = parts[0]
    order = _parse_int(parts[-1])
    group = None
    if len(parts) >= 4 and order is not None and _parse_int(parts[-2]) is not None:
        group = order
        order = _parse_int(parts[-2])
        prompt_parts = parts[1:-2]
    elif order is not None:
        prompt_parts = parts[1:-1]
    else:
        raise InvalidInputError(f"--pair {spec!r} has no integer ORDER segment")
    prompt = ":".join(prompt_parts).strip()
    if len(prompt) >= 2 and prompt[0] == prompt[-1] and prompt[0] in "\"'":
        prompt = prompt[1:-1]
    if not prompt:
        raise InvalidInputError(f"--pair {spec!r} has an empty prompt")
    if group is not None and group < 1:
        raise InvalidInputError(f"--pair {spec!r}: GROUP must be >= 1")
    return path, prompt, order, group


def _roles_summary(packed) -> dict:
    out = []
    for i, (start, end) in enumerate(packed.spans, start=1):
        roles = packed.roles[start:end]
        out.append(
            {
                "prompt_index": i,
                "span": [start, end],
                "sot": int(np.flatnonzero(roles == Role.SOT)[0]),
                "content": np.flatnonzero(roles == Role.CONTENT).tolist(),
                "eot": int(np.flatnonzero(roles == Role.EOT)[0]),
                "pad_count": int((roles == Role.PAD).sum()),
            }
        )
    return {"spans": out, "length": packed.length}


@click.group()
@click.version_option(package_name="maskedit")
def main():
    """Single-pass multi-instruction image editing."""


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--pair",
    "pair_specs",
    multiple=True,
    required=True,
    metavar='MASK.png:"PROMPT":ORDER[:GROUP]',
    help="repeatable mask-prompt pair; GROUP defaults to a fresh group per pair",
)
@click.option("--steps", default=50, show_default=True, type=int)
@click.option("--blend-stop", default=None, type=int, help="blend while t > S; default ceil(steps/10)")
@click.option("--text-scale", default=7.5, show_default=True, type=float)
@click.option("--image-scale", default=1.5, show_default=True, type=float)
@click.option("--boost", "boost_weight", default=0.3, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--backend", default="toy", type=click.Choice(BACKEND_NAMES), show_default=True)
@click.option("--no-cross-control", is_flag=True)
@click.option("--no-self-control", is_flag=True)
@click.option("--no-boost", is_flag=True)
@click.option(
    "--background-policy",
    default="sot_pad_only",
    type=click.Choice([p.value for p in BackgroundPolicy]),
    show_default=True,
)
@click.option("--dump-attention", "dump_attention", default=None, type=click.Path())
@click.option("--dump-roles", is_flag=True, help="print token role spans as JSON")
@click.option("--out", "out_path", required=True, type=click.Path())
@_exit_codes
def edit(
    image_path,
    pair_specs,
    steps,
    blend_stop,
    text_scale,
    image_scale,
    boost_weight,
    seed,
    backend,
    no_cross_control,
    no_self_control,
    no_boost,
    background_policy,
    dump_attention,
    dump_roles,
    out_path,
):
    """Apply every mask-prompt pair to IMAGE in one sampling pass."""
    image = load_image(image_path)
    pairs = []
    for i, spec in enumerate(pair_specs):
        mask_path, prompt, order, group = parse_pair(spec)
        raster = load_mask_png(mask_path)
        pairs.append(
            (
                MaskSpec(
                    raster,
                    order=order,
                    group_id=group if group is not None else i + 1,
                    prompt_index=i + 1,
                ),
                prompt,
            )
        )
    control = AttentionControlConfig(
        boost_weight=boost_weight,
        enable_cross=not no_cross_control,
        enable_self=not no_self_control,
        enable_boost=not no_boost,
        background_policy=BackgroundPolicy(background_policy),
    )
    config = SamplerConfig(
        steps=steps,
        blend_stop=blend_stop,
        text_scale=text_scale,
        image_scale=image_scale,
        seed=seed,
        control=control,
    )
    request = EditRequest(image=image, pairs=pairs, config=config)
    bundle = create_backend(backend, image.shape[:2], steps=steps)

    if dump_roles:
        packed = concat_prompts(encode_prompts([p for _m, p in pairs], bundle.encoder))
        click.echo(json.dumps(_roles_summary(packed), indent=2))

    recorder = AttentionDumpRecorder(dump_attention) if dump_attention else None
    try:
        result = run_edit(
            request,
            bundle.denoiser,
            bundle.codec,
            bundle.encoder,
            schedule=bundle.schedule_factory(steps),
            attention_recorder=recorder,
        )
    finally:
        if recorder is not None:
            recorder.close()

    out = Path(out_path)
    save_png(result.image, out)
    sidecar = out.with_suffix(".json")
    sidecar.write_text(
        json.dumps(resolved_config_dict(request, bundle.identity), indent=2, sort_keys=True)
        + "\n"
    )
    click.echo(f"wrote {out} and {sidecar} ({result.stats.steps} steps)")


@main.group()
def bench():
    """Benchmark cases and method sweeps."""


@bench.command("sample-dir")
def bench_sample_dir():
    """Print the path of the bundled synthetic case set."""
    click.echo(sample_cases_dir())


_SCORERS = {"toy": ToyScorer, "clip": ClipScorer, "pick": PickScorer}


@bench.command("run")
@click.option("--cases", "cases_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    "--methods",
    "methods_path",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="YAML method list; defaults to the four built-in ablation arms",
)
@click.option("--out", "out_base", default="report", type=click.Path(), show_default=True)
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--scorers", "scorer_names", default="toy", show_default=True, help="comma list: toy,clip,pick")
@click.option("--steps", default=8, show_default=True, type=int, help="steps for the default ablation arms")
@_exit_codes
def bench_run(cases_dir, methods_path, out_base, workers, scorer_names, steps):
    """Run every method over every case and write report.{json,md}."""
    cases = load_cases(cases_dir)
    if methods_path:
        methods = load_methods(methods_path)
    else:
        methods = ablation_methods({"steps": steps, "seed": 0})
    scorers = []
    for name in [s.strip() for s in scorer_names.split(",") if s.strip()]:
        if name not in _SCORERS:
            raise InvalidInputError(f"unknown scorer {name!r}; available: {sorted(_SCORERS)}")
        scorers.append(_SCORERS[name]())
    report = run_benchmark(cases, methods, scorers, workers=workers)
    json_path, md_path = write_report(report, out_base)
    click.echo(f"wrote {json_path} and {md_path}")
    for method in report.methods:
        agg = report.aggregates[method]
        metrics = ", ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items()))
        click.echo(f"  {method}: {metrics}")


@main.command()
@click.option("--port", default=None, type=int)
@click.option("--store", "store_path", default=None, type=click.Path())
@click.option("--backend", default=None, type=click.Choice(BACKEND_NAMES))
@click.option("--workers", default=None, type=int)
@click.option("--max-upload", default=None, type=int)
@click.option("--ui-dist", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@_exit_codes
def serve(port, store_path, backend, workers, max_upload, ui_dist, host):
    """Run the HTTP edit service."""
    import uvicorn

    from .service import Settings, create_app

    overrides = {}
    if port is not None:
        overrides["port"] = port
    if store_path is not None:
        overrides["store_path"] = Path(store_path)
    if backend is not None:
        overrides["backend"] = backend
    if workers is not None:
        overrides["workers"] = workers
    if max_upload is not None:
        overrides["max_upload_bytes"] = max_upload
    if ui_dist is not None:
        overrides["ui_dist"] = Path(ui_dist)
    settings = Settings.from_env(**overrides)
    uvicorn.run(create_app(settings), host=host, port=settings.port)


@main.group()
def client():
    """Thin HTTP client for a running edit service."""


def _service_url(url: str) -> str:
    return url.rstrip("/")


@client.command("submit")
@click.option("--url", default="http://127.0.0.1:8321", show_default=True)
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pair", "pair_specs", multiple=True, required=True, metavar='MASK.png:"PROMPT":ORDER[:GROUP]')
@click.option("--steps", default=50, show_default=True, type=int)
@click.option("--blend-stop", default=None, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--backend", default=None, type=click.Choice(BACKEND_NAMES))
@_exit_codes
def client_submit(url, image_path, pair_specs, steps, blend_stop, seed, backend):
    """Upload an edit job; prints the job id."""
    import httpx

    files = [("image", (Path(image_path).name, Path(image_path).read_bytes(), "image/png"))]
    pairs = []
    for i, spec in enumerate(pair_specs):
        mask_path, prompt, order, group = parse_pair(spec)
        files.append(("masks", (f"mask{i}.png", Path(mask_path).read_bytes(), "image/png")))
        pairs.append(
            {"prompt": prompt, "order": order, "group": group, "mask_index": i}
        )
    config = {"steps": steps, "seed": seed}
    if blend_stop is not None:
        config["blend_stop"] = blend_stop
    if backend is not None:
        config["backend"] = backend
    body = {"pairs": pairs, "config": config}
    resp = httpx.post(
        f"{_service_url(url)}/v1/edits",
        files=files,
        data={"request": json.dumps(body)},
        timeout=60,
    )
    if resp.status_code not in (200, 202):
        raise InvalidInputError(f"service rejected the job ({resp.status_code}): {resp.text}")
    click.echo(resp.json()["id"])


@client.command("status")
@click.option("--url", default="http://127.0.0.1:8321", show_default=True)
@click.argument("job_id")
@_exit_codes
def client_status(url, job_id):
    import httpx

    resp = httpx.get(f"{_service_url(url)}/v1/edits/{job_id}", timeout=30)
    click.echo(json.dumps(resp.json(), indent=2))
    if resp.status_code != 200:
        sys.exit(2)


@client.command("result")
@click.option("--url", default="http://127.0.0.1:8321", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--wait/--no-wait", default=True, show_default=True)
@click.option("--interval", default=0.5, show_default=True, type=float)
@click.argument("job_id")
@_exit_codes
def client_result(url, out_path, wait, interval, job_id):
    """Download a finished job's PNG (polling until DONE by default)."""
    import httpx

    base = _service_url(url)
    while True:
        status = httpx.get(f"{base}/v1/edits/{job_id}", timeout=30)
        if status.status_code != 200:
            raise InvalidInputError(f"job lookup failed: {status.text}")
        state = status.json()["state"]
        if state == "DONE":
            break
        if state == "FAILED":
            raise BackendError(f"job failed: {status.json().get('error')}")
        if not wait:
            raise InvalidInputError(f"job is {state}; pass --wait to poll")
        time.sleep(interval)
    resp = httpx.get(f"{base}/v1/edits/{job_id}/result", timeout=60)
    Path(out_path).write_bytes(resp.content)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
