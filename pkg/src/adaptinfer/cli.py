"""Operator CLI: a thin client over the analysis service.

Every command talks HTTP to the service; by default the app is mounted
in-process so a command is still a single deterministic invocation, and
``--server URL`` points the same client at a remote instance. Each command
writes its analysis files plus a ``run_manifest.json`` that the ``replay``
command can re-execute byte-for-byte.

Exit codes: 0 success, 2 invalid input, 3 infeasible budget, 4 numeric
failure.
"""

from __future__ import annotations

import asyncio
import json
from pathlib import Path

import click
import httpx

from . import __version__
from .sensitivity import SensitivityRecord, write_records_csv
from .service.app import create_app
from .tensor import Precision

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4

SWEEP_HEADER = ["budget", "memory", "latency_proxy", "accuracy"]


# --- service client ---------------------------------------------------------------

async def _apost(path: str, payload: dict) -> httpx.Response:
    transport = httpx.ASGITransport(app=create_app(),
                                    raise_app_exceptions=False)
    async with httpx.AsyncClient(transport=transport,
                                 base_url="http://adaptinfer.internal") as client:
        return await client.post(path, json=payload)


def _bail(resp: httpx.Response) -> None:
    try:
        body = resp.json()
    except ValueError:
        body = {"error": "unexpected", "detail": resp.text}
    detail = body.get("detail", resp.text)
    error = body.get("error", "unexpected")
    click.echo(f"error: {detail}", err=True)
    if error == "infeasible_budget":
        best = body.get("best_achievable_bytes")
        if best is not None:
            click.echo(f"best achievable memory: {best} bytes", err=True)
        raise SystemExit(EXIT_INFEASIBLE)
    if resp.status_code == 400 or error == "invalid_input":
        raise SystemExit(EXIT_INVALID)
    raise SystemExit(EXIT_NUMERIC)


def _post(server: str | None, path: str, payload: dict) -> dict:
    payload = {k: v for k, v in payload.items() if v is not None}
    try:
        if server:
            with httpx.Client(base_url=server, timeout=600.0) as client:
                resp = client.post(path, json=payload)
        else:
            resp = asyncio.run(_apost(path, payload))
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        raise SystemExit(EXIT_INVALID) from None
    if resp.status_code != 200:
        _bail(resp)
    return resp.json()


# --- run manifests ----------------------------------------------------------------

def _argv(command: str, flags: dict) -> list[str]:
    """Canonical argv that reproduces this invocation via ``replay``."""
    argv = [command]
    for flag, value in flags.items():
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv.extend([flag, ",".join(str(v) for v in value)])
        else:
            argv.extend([flag, str(value)])
    return argv


def _write_run_manifest(out_dir: Path, command: str, argv: list[str],
                        inputs: dict, parameters: dict, seed: int | None,
                        outputs: list[str]) -> None:
    doc = {
        "command": command,
        "argv": argv,
        "inputs": {k: v for k, v in inputs.items() if v is not None},
        "parameters": {k: v for k, v in parameters.items() if v is not None},
        "seed": seed,
        "outputs": outputs,
        "tool_version": __version__,
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- option plumbing --------------------------------------------------------------

def _floats(_ctx, _param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"expected comma-separated floats, got {value!r}")


def _labels(_ctx, _param, value):
    if value is None:
        return None
    labels = [v.strip() for v in value.split(",") if v.strip()]
    for label in labels:
        try:
            Precision.parse(label)
        except Exception:
            raise click.UsageError(f"unknown precision {label!r}")
    return labels


def _budget_specs(_ctx, _param, value):
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _resolve_budget(spec: str, server: str | None, model: str) -> int:
    """A byte count, or 'NN%' of the model's baseline total."""
    if spec.endswith("%"):
        try:
            pct = float(spec[:-1])
        except ValueError:
            raise click.UsageError(f"bad budget {spec!r}")
        total = _post(server, "/inspect", {"model": model})["total_bytes"]
        return max(1, int(total * pct / 100.0))
    try:
        return int(spec)
    except ValueError:
        raise click.UsageError(f"bad budget {spec!r} (bytes or 'NN%')")


def _server_option(fn):
    return click.option("--server", default=None, metavar="URL",
                        help="Remote service URL (default: in-process)")(fn)


def _out_dir_option(fn):
    return click.option("--out-dir", default=".", show_default=True,
                        type=click.Path(file_okay=False),
                        help="Directory for output files")(fn)


@click.group()
@click.version_option(version=__version__, prog_name="adaptinfer")
def cli() -> None:
    """Budget-adaptive CNN inference engine and optimization planner."""


# --- commands ---------------------------------------------------------------------

@cli.command()
@click.option("--model", required=True, help="Manifest path or builtin name")
@_out_dir_option
@_server_option
def inspect(model: str, out_dir: str, server: str | None) -> None:
    """Per-layer parameter/activation/memory table and model totals."""
    data = _post(server, "/inspect", {"model": model})
    out = _out_dir(out_dir)

    click.echo(f"model {data['name']}: {data['layer_count']} layers")
    header = (f"  {'id':<14} {'kind':<18} {'output':<16} "
              f"{'params':>9} {'act_bytes':>10} {'macs':>12}")
    click.echo(header)
    for row in data["layers"]:
        shape = "x".join(str(d) for d in row["output_shape"])
        click.echo(f"  {row['id']:<14} {row['kind']:<18} {shape:<16} "
                   f"{row['param_count']:>9} {row['activation_bytes']:>10} "
                   f"{row['macs']:>12}")
    click.echo(f"totals: params {data['param_bytes']} B; "
               f"activations {data['activation_bytes']} B; "
               f"total {data['total_bytes']} B ({data['total_mib']:.2f} MiB); "
               f"latency proxy {data['latency_proxy']:.0f}")

    (out / "inspect.json").write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n")
    argv = _argv("inspect", {"--model": model, "--out-dir": out_dir,
                             "--server": server})
    _write_run_manifest(out, "inspect", argv, {"model": model}, {}, None,
                        ["inspect.json"])


@cli.command()
@click.option("--model", required=True)
@click.option("--calib", required=True,
              help="Calibration dataset (.aat + .labels.json)")
@click.option("--bins", default=64, show_default=True,
              help="Histogram bins (plus the dedicated zero bin)")
@click.option("--seed", default=0, show_default=True)
@_out_dir_option
@_server_option
def calibrate(model: str, calib: str, bins: int, seed: int, out_dir: str,
              server: str | None) -> None:
    """Calibration profiles plus per-layer activation histogram CSVs."""
    data = _post(server, "/calibrate", {
        "model": model, "calib": calib, "seed": seed, "bins": bins})
    out = _out_dir(out_dir)

    outputs = ["profiles.json"]
    profiles = {}
    for profile in data["profiles"]:
        lid = profile["layer_id"]
        profiles[lid] = {k: profile[k] for k in
                         ("layer_id", "quantiles", "baseline_zero_fraction",
                          "sample_count")}
        hist_name = f"hist_{lid}.csv"
        lines = ["bin_lo,bin_hi,count"]
        lines += [f"{b['lo']!r},{b['hi']!r},{b['count']}"
                  for b in profile["histogram"]]
        (out / hist_name).write_text("\n".join(lines) + "\n")
        outputs.append(hist_name)
        click.echo(f"{lid}: {profile['sample_count']} samples, "
                   f"zero fraction {profile['baseline_zero_fraction']:.3f}")
    (out / "profiles.json").write_text(
        json.dumps(profiles, indent=2, sort_keys=True) + "\n")
    argv = _argv("calibrate", {"--model": model, "--calib": calib,
                               "--bins": bins, "--seed": seed,
                               "--out-dir": out_dir, "--server": server})
    _write_run_manifest(out, "calibrate", argv,
                        {"model": model, "calib": calib},
                        {"bins": bins}, seed, outputs)


@cli.command()
@click.option("--model", required=True)
@click.option("--dataset", required=True, help="Evaluation dataset")
@click.option("--calib", default=None,
              help="Calibration dataset (defaults to --dataset)")
@click.option("--sparsity-levels", callback=_floats, default=None,
              metavar="S1,S2,...", help="Default: 0,0.25,0.5,0.75,1.0")
@click.option("--precisions", callback=_labels, default=None,
              metavar="P1,P2,...", help="Default: fp32,fp16,fp8,int4,int2")
@click.option("--eval-subset", type=int, default=None,
              help="Evaluate on the first N samples only")
@click.option("--seed", default=0, show_default=True)
@_out_dir_option
@_server_option
def sensitivity(model: str, dataset: str, calib: str | None,
                sparsity_levels, precisions, eval_subset: int | None,
                seed: int, out_dir: str, server: str | None) -> None:
    """Per-layer (sparsity x precision) accuracy/memory table as CSV."""
    data = _post(server, "/sensitivity", {
        "model": model, "dataset": dataset, "calib": calib,
        "sparsity_levels": sparsity_levels, "precisions": precisions,
        "subset": eval_subset, "seed": seed})
    out = _out_dir(out_dir)

    # rows arrive as JSON; rebuild records for the canonical CSV writer
    records = []
    for r in data["records"]:
        label = (f"int{r['q_bits']}" if r["q_kind"] == "integer"
                 else f"fp{r['q_bits']}")
        records.append(SensitivityRecord(
            layer_id=r["layer_id"], sparsity_level=r["sparsity_level"],
            threshold=r["threshold"], precision=Precision.parse(label),
            accuracy=r["accuracy"], memory_bytes=r["memory_bytes"]))
    write_records_csv(records, out / "sensitivity.csv")
    click.echo(f"wrote {len(records)} records to {out / 'sensitivity.csv'}")
    argv = _argv("sensitivity", {
        "--model": model, "--dataset": dataset, "--calib": calib,
        "--sparsity-levels": sparsity_levels, "--precisions": precisions,
        "--eval-subset": eval_subset, "--seed": seed, "--out-dir": out_dir,
        "--server": server})
    _write_run_manifest(
        out, "sensitivity", argv,
        {"model": model, "dataset": dataset, "calib": calib},
        {"sparsity_levels": sparsity_levels, "precisions": precisions,
         "eval_subset": eval_subset}, seed, ["sensitivity.csv"])


@cli.command()
@click.option("--model", required=True)
@click.option("--table", required=True, help="Sensitivity CSV")
@click.option("--budget", required=True, metavar="BYTES|NN%",
              help="Memory budget (bytes, or percent of baseline)")
@click.option("--latency-budget", type=float, default=None,
              help="Optional latency-proxy budget")
@click.option("--joint-eval", is_flag=True,
              help="Measure the plan's accuracy post hoc on --dataset")
@click.option("--dataset", default=None, help="Dataset for --joint-eval")
@click.option("--eval-subset", type=int, default=None)
@click.option("--seed", default=0, show_default=True)
@_out_dir_option
@_server_option
def plan(model: str, table: str, budget: str, latency_budget: float | None,
         joint_eval: bool, dataset: str | None, eval_subset: int | None,
         seed: int, out_dir: str, server: str | None) -> None:
    """Greedy optimization plan meeting a budget; exit 3 if infeasible."""
    if joint_eval and dataset is None:
        raise click.UsageError("--joint-eval requires --dataset")
    budget_bytes = _resolve_budget(budget, server, model)
    data = _post(server, "/plan", {
        "model": model, "table": table, "budget_bytes": budget_bytes,
        "latency_budget": latency_budget,
        "joint_eval": dataset if joint_eval else None,
        "subset": eval_subset})
    out = _out_dir(out_dir)

    doc = data["plan"]
    if data.get("joint_accuracy") is not None:
        doc = {**doc, "joint_accuracy": data["joint_accuracy"]}
    (out / "plan.json").write_text(json.dumps(doc, indent=2) + "\n")

    n = len(doc["assignments"])
    click.echo(f"plan: {n} assignment(s), projected memory "
               f"{doc['projected']['memory_bytes']} B "
               f"(budget {budget_bytes} B)")
    for a in doc["assignments"]:
        click.echo(f"  {a['layer_id']}: s={a['sparsity_level']} "
                   f"T={a['threshold']:.6g} precision={a['precision']}")
    if data.get("joint_accuracy") is not None:
        click.echo(f"joint accuracy: {data['joint_accuracy']:.4f}")
    argv = _argv("plan", {
        "--model": model, "--table": table, "--budget": budget,
        "--latency-budget": latency_budget, "--joint-eval": joint_eval,
        "--dataset": dataset, "--eval-subset": eval_subset, "--seed": seed,
        "--out-dir": out_dir, "--server": server})
    _write_run_manifest(
        out, "plan", argv,
        {"model": model, "table": table,
         "dataset": dataset if joint_eval else None},
        {"budget": budget, "budget_bytes": budget_bytes,
         "latency_budget": latency_budget, "joint_eval": joint_eval or None,
         "eval_subset": eval_subset}, seed, ["plan.json"])


@cli.command()
@click.option("--model", required=True)
@click.option("--table", required=True, help="Sensitivity CSV")
@click.option("--budget-list", required=True, callback=_budget_specs,
              metavar="B1,B2,...", help="Budgets in bytes or 'NN%'")
@click.option("--joint-eval", is_flag=True,
              help="Measure each plan's accuracy post hoc on --dataset")
@click.option("--dataset", default=None, help="Dataset for --joint-eval")
@click.option("--eval-subset", type=int, default=None)
@click.option("--seed", default=0, show_default=True)
@_out_dir_option
@_server_option
def sweep(model: str, table: str, budget_list, joint_eval: bool,
          dataset: str | None, eval_subset: int | None, seed: int,
          out_dir: str, server: str | None) -> None:
    """Budget sweep -> CSV frontier of (budget, memory, latency, accuracy)."""
    if joint_eval and dataset is None:
        raise click.UsageError("--joint-eval requires --dataset")
    budgets = [_resolve_budget(spec, server, model) for spec in budget_list]
    data = _post(server, "/sweep", {
        "model": model, "table": table, "budgets": budgets,
        "joint_eval": dataset if joint_eval else None, "subset": eval_subset})
    out = _out_dir(out_dir)

    for skipped in data["skipped_infeasible"]:
        click.echo(f"budget {skipped} B is infeasible; skipped", err=True)
    if not data["points"]:
        click.echo("error: no budget in the list is feasible", err=True)
        raise SystemExit(EXIT_INFEASIBLE)

    lines = [",".join(SWEEP_HEADER)]
    for p in data["points"]:
        lines.append(f"{p['budget_bytes']},{p['memory_bytes']},"
                     f"{p['latency_proxy']!r},{p['accuracy']!r}")
        click.echo(f"budget {p['budget_bytes']:>12} B -> memory "
                   f"{p['memory_bytes']:>12} B, latency {p['latency_proxy']:.0f}, "
                   f"accuracy {p['accuracy']:.4f}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    argv = _argv("sweep", {
        "--model": model, "--table": table, "--budget-list": budget_list,
        "--joint-eval": joint_eval, "--dataset": dataset,
        "--eval-subset": eval_subset, "--seed": seed, "--out-dir": out_dir,
        "--server": server})
    _write_run_manifest(
        out, "sweep", argv,
        {"model": model, "table": table,
         "dataset": dataset if joint_eval else None},
        {"budget_list": budget_list, "budgets_bytes": budgets,
         "joint_eval": joint_eval or None, "eval_subset": eval_subset},
        seed, ["sweep.csv"])


@cli.command()
@click.option("--model", required=True)
@click.option("--table", required=True, help="Sensitivity CSV")
@click.option("--trace", required=True, help="Budget trace CSV")
@click.option("--dataset", default=None,
              help="Workload served in chunks across the trace")
@click.option("--seed", default=0, show_default=True)
@_out_dir_option
@_server_option
def simulate(model: str, table: str, trace: str, dataset: str | None,
             seed: int, out_dir: str, server: str | None) -> None:
    """Replay a budget trace through the runtime controller."""
    data = _post(server, "/simulate", {
        "model": model, "table": table, "trace": trace, "workload": dataset})
    out = _out_dir(out_dir)

    log_path = out / "controller_log.jsonl"
    with open(log_path, "w") as fh:
        for entry in data["entries"]:
            fh.write(json.dumps(entry) + "\n")
    for entry in data["entries"]:
        status = "ok" if entry["feasible"] else "INFEASIBLE (floor installed)"
        chunk = entry.get("chunk")
        served = f", chunk acc {chunk['accuracy']:.4f}" if chunk else ""
        click.echo(f"t={entry['timestamp_ms']}ms budget "
                   f"{entry['budget']['memory_bytes']} B: {status}, memory "
                   f"{entry['projected_memory_bytes']} B{served}")
    argv = _argv("simulate", {
        "--model": model, "--table": table, "--trace": trace,
        "--dataset": dataset, "--seed": seed, "--out-dir": out_dir,
        "--server": server})
    _write_run_manifest(
        out, "simulate", argv,
        {"model": model, "table": table, "trace": trace,
         "dataset": dataset}, {}, seed, ["controller_log.jsonl"])


@cli.command(name="eval")
@click.option("--model", required=True)
@click.option("--dataset", required=True)
@click.option("--plan", "plan_path", default=None,
              help="Apply a saved plan.json before evaluating")
@click.option("--eval-subset", type=int, default=None)
@_out_dir_option
@_server_option
def eval_cmd(model: str, dataset: str, plan_path: str | None,
             eval_subset: int | None, out_dir: str, server: str | None) -> None:
    """Top-1 accuracy of the model (optionally under a plan)."""
    data = _post(server, "/evaluate", {
        "model": model, "dataset": dataset, "plan": plan_path,
        "subset": eval_subset})
    out = _out_dir(out_dir)
    (out / "eval.json").write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n")
    click.echo(f"accuracy: {data['accuracy']:.4f} "
               f"over {data['sample_count']} samples")
    argv = _argv("eval", {
        "--model": model, "--dataset": dataset, "--plan": plan_path,
        "--eval-subset": eval_subset, "--out-dir": out_dir,
        "--server": server})
    _write_run_manifest(out, "eval", argv,
                        {"model": model, "dataset": dataset,
                         "plan": plan_path},
                        {"eval_subset": eval_subset}, None, ["eval.json"])


@cli.command()
@click.option("--model", required=True)
@click.option("--images", required=True, help=".aat image stack (N,C,H,W)")
@click.option("--plan", "plan_path", default=None)
@_out_dir_option
@_server_option
def infer(model: str, images: str, plan_path: str | None, out_dir: str,
          server: str | None) -> None:
    """Run inference; writes predictions.json with class scores."""
    data = _post(server, "/infer", {
        "model": model, "images": images, "plan": plan_path})
    out = _out_dir(out_dir)
    (out / "predictions.json").write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n")
    click.echo(f"predictions: {data['predictions']}")
    argv = _argv("infer", {
        "--model": model, "--images": images, "--plan": plan_path,
        "--out-dir": out_dir, "--server": server})
    _write_run_manifest(out, "infer", argv,
                        {"model": model, "images": images, "plan": plan_path},
                        {}, None, ["predictions.json"])


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def replay(manifest: str) -> None:
    """Re-execute a recorded run_manifest.json."""
    doc = json.loads(Path(manifest).read_text())
    argv = doc.get("argv")
    if not isinstance(argv, list) or not argv:
        raise click.UsageError(f"{manifest}: no argv recorded")
    click.echo(f"replaying: adaptinfer {' '.join(argv)}")
    cli.main(args=argv, standalone_mode=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the analysis service as a daemon."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
