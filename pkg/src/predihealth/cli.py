"""Operator command line: serve, train, evaluate, simulate, export, stratify.

Exit codes are a stable scripting contract: 0 success, 1 user error
(bad input, missing file, domain rejection), 2 internal error. Logs go to
stderr as JSON lines; data goes to stdout or the requested files.
"""

from __future__ import annotations

import errno
import json
import logging
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Optional

import click

from . import __version__
from .config import BadConfig, RunConfig
from .fhir import validate_resource
from .model import parse_rfc3339
from .rules import ThresholdConfig
from .service import MonitoringService
from .sim import (
    EpisodeKind,
    EpisodeSpec,
    InvalidSpec,
    TraceSpec,
    gen_cohort,
    gen_trace,
    read_cohort,
    register_trace_devices,
    trace_bytes,
    write_cohort,
)
from .stratify import (
    MetaObjective,
    evaluate,
    load_artifact,
    load_dataset,
    preprocess,
    save_artifact,
    stratify_cohort,
    train_stacked,
)
from .stratify.data import save_dataset, patient_to_row

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2

_USER_ERRORS = (
    BadConfig,
    InvalidSpec,
    FileNotFoundError,
    ValueError,
)


class _JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(entry, separators=(",", ":"))


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run(fn, *args: Any, **kwargs: Any) -> Any:
    """Run a command body with the exit-code contract applied."""
    try:
        return fn(*args, **kwargs)
    except _USER_ERRORS as exc:
        _fail(str(exc), EXIT_USER)
    except Exception as exc:  # noqa: BLE001 - the contract demands a stable exit code
        if hasattr(exc, "code"):
            _fail(f"{getattr(exc, 'code')}: {exc}", EXIT_USER)
        logging.getLogger(__name__).exception("internal error")
        _fail(f"internal: {exc}", EXIT_INTERNAL)


@click.group(context_settings={"auto_envvar_prefix": "PREDI"})
@click.version_option(__version__)
@click.option("--log-level", default="info", show_default=True)
def main(log_level: str) -> None:
    """Heart-failure telemonitoring platform."""
    _setup_logging(log_level)


def _load_threshold_config(path: Optional[str]) -> ThresholdConfig:
    if path is None:
        return ThresholdConfig()
    return ThresholdConfig.load(path)


# -- serve -------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="RunConfig JSON file.")
@click.option("--data-dir", default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--risk-config", type=click.Path(), default=None)
@click.option("--cohort", "cohort_path", type=click.Path(), default=None,
              help="Seed the patient directory from a cohort JSON at startup.")
@click.option("--static-dir", type=click.Path(), default=None,
              help="Serve the console build from this directory.")
def serve(config_path, data_dir, host, port, model_path, risk_config, cohort_path,
          static_dir):
    """Run the gateway + rules + API server."""

    def body() -> None:
        import uvicorn

        from .server import create_app

        config = RunConfig.load(
            config_path, data_dir=data_dir, host=host, port=port,
            model=model_path, risk_config=risk_config,
        )
        cfg = _load_threshold_config(config.risk_config)
        service = MonitoringService(config.data_dir, cfg=cfg, model_path=config.model)
        if cohort_path is not None:
            patients, _, _ = read_cohort(cohort_path)
            added = service.patients.seed(patients)
            logging.getLogger(__name__).info(
                "seeded %d new patients from %s", added, cohort_path
            )
        static = static_dir
        if static is None and Path("frontend/dist").is_dir():
            static = "frontend/dist"
        app = create_app(service, api_token=config.api_token, static_dir=static)
        try:
            uvicorn.run(app, host=config.host, port=config.port,
                        log_level=config.log_level)
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise BadConfig(
                    f"port in use: {config.host}:{config.port}"
                ) from None
            raise
        finally:
            service.close()

    _run(body)


# -- train / evaluate ----------------------------------------------------------


def _print_metrics_report(report_json: dict[str, Any], as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(report_json, indent=2, sort_keys=True))
        return
    metrics = report_json["metrics"]
    confusion = report_json["confusion"]
    click.echo("held-out metrics:")
    for name in ("accuracy", "precision", "sensitivity", "f1", "dor"):
        value = metrics[name]
        rendered = "undefined" if value is None else (
            value if isinstance(value, str) else f"{value:.4f}"
        )
        click.echo(f"  {name:>12}: {rendered}")
    click.echo(
        "  confusion: tp={tp} tn={tn} fp={fp} fn={fn}".format(**confusion)
    )


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(), required=True,
              help="Feature CSV with a label column.")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default="model.json",
              show_default=True)
@click.option("--precision-floor", type=float, default=0.65, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable report.")
def train(dataset_path, seed, out_path, precision_floor, as_json):
    """Train the two specialists and the blending meta-model."""

    def body() -> None:
        raw = load_dataset(dataset_path)
        model, report = train_stacked(
            raw, seed=seed, objective=MetaObjective(precision_floor=precision_floor)
        )
        save_artifact(model, out_path)
        payload = report.to_json()
        payload["artifact"] = str(out_path)
        payload["seed"] = seed
        _print_metrics_report(payload, as_json)

    _run(body)


@main.command("evaluate")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--json", "as_json", is_flag=True)
def evaluate_cmd(model_path, dataset_path, as_json):
    """Score a labeled dataset with a trained artifact."""

    def body() -> None:
        model = load_artifact(model_path)
        raw = load_dataset(dataset_path)
        matrix, report = preprocess(raw)
        probability, labels = model.predict_blocks(matrix.clinical, matrix.echo)
        metrics, counts = evaluate(labels.tolist(), matrix.labels.tolist())
        payload = {
            "metrics": metrics.to_json(),
            "confusion": counts.to_json(),
            "rows": {"total": len(raw), "kept": len(matrix.row_ids),
                     "dropped": report.count},
        }
        _print_metrics_report(payload, as_json)

    _run(body)


# -- simulate -------------------------------------------------------------------


def _parse_episode(raw: str, start: datetime) -> EpisodeSpec:
    try:
        kind, onset_h, duration_h, magnitude = raw.split(":")
        return EpisodeSpec(
            kind=EpisodeKind(kind),
            onset=start + timedelta(hours=float(onset_h)),
            duration=timedelta(hours=float(duration_h)),
            magnitude=float(magnitude),
        )
    except (ValueError, KeyError):
        raise InvalidSpec(
            f"episode must be kind:onset_h:duration_h:magnitude, got {raw!r}"
        ) from None


@main.command()
@click.option("--cohort-spec", type=click.Path(), default=None,
              help="Existing cohort JSON (otherwise generated).")
@click.option("--trace-spec", "trace_spec_path", type=click.Path(), default=None,
              help="TraceSpec JSON; flags below are ignored when given.")
@click.option("--patients", "n_patients", type=int, default=3, show_default=True)
@click.option("--prevalence", type=float, default=0.4, show_default=True)
@click.option("--days", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--start", "start_ts", default=None,
              help="RFC 3339 trace start (default: fixed simulator epoch).")
@click.option("--base-weight", type=float, default=75.0, show_default=True)
@click.option("--cadence", "cadences", multiple=True,
              help="metric=minutes override (repeatable).")
@click.option("--episode", "episodes", multiple=True,
              help="kind:onset_h:duration_h:magnitude (repeatable).")
@click.option("--target", default=None, help="Server base URL; omit with --offline.")
@click.option("--offline", is_flag=True, help="Write streams to files instead.")
@click.option("--only", "only_patients", multiple=True,
              help="Restrict to these patient ids (repeatable).")
@click.option("--out-dir", type=click.Path(), default="sim-out", show_default=True)
@click.option("--speed", type=float, default=None,
              help="Real-time multiplier; omit for max speed.")
def simulate(cohort_spec, trace_spec_path, n_patients, prevalence, days, seed,
             start_ts, base_weight, cadences, episodes, target, offline,
             only_patients, out_dir, speed):
    """Generate a cohort and telemetry, then replay it into a gateway."""

    def body() -> None:
        from .sim import DEFAULT_CADENCE_MIN, DEFAULT_START

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cadence_map = dict(DEFAULT_CADENCE_MIN)
        for override in cadences:
            metric, _, minutes = override.partition("=")
            if not minutes:
                raise InvalidSpec(f"cadence must be metric=minutes, got {override!r}")
            cadence_map[metric] = float(minutes)
        start = parse_rfc3339(start_ts) if start_ts else DEFAULT_START
        if cohort_spec is not None:
            patients, labels, _ = read_cohort(cohort_spec)
        else:
            patients, labels, truth = gen_cohort(n_patients, prevalence, seed)
            write_cohort(out / "cohort.json", patients, labels, truth, seed, prevalence)
            save_dataset(
                [patient_to_row(p, label) for p, label in zip(patients, labels)],
                out / "dataset.csv",
            )
        if only_patients:
            wanted = set(only_patients)
            patients = [p for p in patients if p.patient_id in wanted]
            if not patients:
                raise InvalidSpec(f"--only matched no cohort patients: {sorted(wanted)}")
        specs = []
        for index, patient in enumerate(patients):
            if trace_spec_path is not None:
                spec = TraceSpec.from_json(
                    json.loads(Path(trace_spec_path).read_text(encoding="utf-8"))
                )
                spec = TraceSpec(
                    patient_id=patient.patient_id, days=spec.days,
                    seed=spec.seed + index, start=spec.start,
                    base_weight_kg=spec.base_weight_kg,
                    cadence_min=spec.cadence_min, episodes=spec.episodes,
                )
            else:
                spec = TraceSpec(
                    patient_id=patient.patient_id, days=days, seed=seed + index,
                    start=start, base_weight_kg=base_weight, cadence_min=cadence_map,
                    episodes=tuple(_parse_episode(e, start) for e in episodes),
                )
            specs.append(spec)

        total_rejected = 0
        reports = {}
        for spec in specs:
            stream = gen_trace(spec)
            if offline:
                (out / f"{spec.patient_id}.jsonl").write_bytes(trace_bytes(stream))
                continue
            if target is None:
                raise InvalidSpec("need --target URL or --offline")
            report = _replay_http(target, stream, speed)
            reports[spec.patient_id] = report
            total_rejected += len(report["rejected"])
        if not offline:
            (out / "replay-report.json").write_text(
                json.dumps(reports, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            click.echo(json.dumps(reports, indent=2, sort_keys=True))
            if total_rejected:
                _fail(f"{total_rejected} messages rejected", EXIT_USER)
        else:
            click.echo(f"streams written to {out}")

    _run(body)


def _replay_http(base_url: str, stream, speed) -> dict[str, Any]:
    """Replay over HTTP: register devices, then batch-post in timestamp order."""
    import httpx

    from .sim import GatewayUnavailable

    base = base_url.rstrip("/")
    with httpx.Client(timeout=30.0) as client:
        try:
            client.get(base + "/healthz").raise_for_status()
        except httpx.HTTPError as exc:
            raise GatewayUnavailable(f"gateway not reachable at {base}: {exc}") from None

        credentials: dict[tuple[str, str], tuple[str, str]] = {}
        unregistered: dict[tuple[str, str], str] = {}

        def register(kind: str, patient_id: str) -> tuple[str, str]:
            # the simulator may be re-run against a live server; swap bindings
            response = client.post(
                base + "/v1/devices",
                json={"kind": kind, "patient_id": patient_id, "replace": True},
            )
            if response.status_code != 200:
                # itemize per message below; other patients keep streaming
                try:
                    code = response.json().get("error", "registration_failed")
                except ValueError:
                    code = "registration_failed"
                unregistered[(patient_id, kind)] = code
                return "", ""
            data = response.json()
            return data["device_id"], data["token"]

        credentials = register_trace_devices(register, stream)
        sent = 0
        acked = 0
        rejected = []
        started = datetime.now(timezone.utc)
        previous_ts = None
        batch: list[tuple[int, dict[str, Any]]] = []  # (stream index, payload)

        def flush() -> None:
            nonlocal acked
            if not batch:
                return
            indices = [i for i, _ in batch]
            response = client.post(
                base + "/v1/ingest/batch", json=[p for _, p in batch]
            )
            response.raise_for_status()
            for result in response.json()["results"]:
                if result["ok"]:
                    acked += 1
                else:
                    rejected.append(
                        {"index": indices[result["index"]], "error": result["error"]}
                    )
            batch.clear()

        for index, message in enumerate(stream):
            sent += 1
            key = (message["patient_id"], message["device_kind"])
            if key in unregistered:
                rejected.append({"index": index, "error": unregistered[key]})
                continue
            ts = parse_rfc3339(message["ts"])
            if speed is not None and previous_ts is not None and ts > previous_ts:
                import time as _time

                _time.sleep((ts - previous_ts).total_seconds() / speed)
                flush()
            previous_ts = ts
            payload = dict(message)
            kind = payload.pop("device_kind")
            device_id, token = credentials[key]
            payload["device_id"] = device_id
            payload["token"] = token
            batch.append((index, payload))
            if len(batch) >= 500:
                flush()
        flush()
        elapsed = max((datetime.now(timezone.utc) - started).total_seconds(), 1e-9)
        return {
            "sent": sent,
            "acked": acked,
            "rejected": rejected,
            "wall_clock_s": elapsed,
            "throughput_per_s": sent / elapsed,
        }


# -- export ---------------------------------------------------------------------


@main.command()
@click.option("--data-dir", default="data", show_default=True)
@click.option("--patient", "patient_id", required=True)
@click.option("--from", "window_from", default=None,
              help="RFC 3339 start (default: beginning of time).")
@click.option("--to", "window_to", default=None, help="RFC 3339 end (default: now).")
@click.option("--out", "out_path", type=click.Path(), required=True)
def export(data_dir, patient_id, window_from, window_to, out_path):
    """Write a FHIR Bundle of a patient window to a file."""

    def body() -> None:
        t0 = parse_rfc3339(window_from) if window_from else datetime(
            1970, 1, 1, tzinfo=timezone.utc)
        t1 = parse_rfc3339(window_to) if window_to else datetime.now(timezone.utc)
        with MonitoringService(data_dir) as service:
            bundle = service.export_patient_bundle(patient_id, t0, t1)
        for entry in bundle["entry"]:
            issues = validate_resource(entry["resource"])
            if issues:
                raise RuntimeError(f"exported resource failed validation: {issues}")
        Path(out_path).write_text(
            json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(f"wrote {bundle['total']} observations to {out_path}")

    _run(body)


# -- stratify ---------------------------------------------------------------------


@main.command("stratify")
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--cohort", "cohort_path", type=click.Path(), required=True)
@click.option("--json", "as_json", is_flag=True)
def stratify_cmd(model_path, cohort_path, as_json):
    """Rank a cohort file by at-risk probability."""

    def body() -> None:
        model = load_artifact(model_path)
        patients, _, _ = read_cohort(cohort_path)
        ranked = stratify_cohort(model, patients)
        if as_json:
            click.echo(json.dumps(
                [{"patient_id": p, "probability": prob} for p, prob in ranked],
                indent=2,
            ))
        else:
            for rank, (patient_id, prob) in enumerate(ranked, start=1):
                click.echo(f"{rank:>4}  {patient_id}  {prob:.4f}")

    _run(body)


if __name__ == "__main__":
    main()
