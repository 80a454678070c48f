"""Command line front door.

serve hosts live sessions, eval scores predictors on a corpus, export
produces training files, synth generates a corpus, replay re-executes
logs. Everything here is thin plumbing over the library modules.
"""

from __future__ import annotations

import json
import os
import sys
import threading
from pathlib import Path

import click

from .errors import MeepError

BASELINES = ("copy_last_query", "modal_action", "nearest_prefix")
NEEDS_TRAIN = ("modal_action", "nearest_prefix")


@click.group()
def cli() -> None:
    """Click-constrained dialog sessions: host, score, export."""


def _fixture_backend(dataset: str | None):
    from .places import FixtureBackend, PlacesDataset, load_bundled_dataset

    data = PlacesDataset.load(dataset) if dataset else load_bundled_dataset()
    return FixtureBackend(data)


@cli.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", "bind", default="127.0.0.1", show_default=True)
@click.option("--backend", "backend_kind", type=click.Choice(["fixture", "live"]), default="fixture", show_default=True)
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Places file for the fixture backend (bundled one if omitted).")
@click.option("--spool", type=click.Path(file_okay=False), default="spool", show_default=True,
              help="Directory session logs are appended to.")
@click.option("--live-url", default=None,
              help="Base URL for the live backend (or MEEP_LIVE_URL). The API key always comes from MEEP_API_KEY.")
@click.option("--sweep-interval", default=60.0, show_default=True,
              help="Seconds between idle-session sweeps.")
def serve(port: int, bind: str, backend_kind: str, dataset: str | None,
          spool: str, live_url: str | None, sweep_interval: float) -> None:
    """Run the session host."""
    import uvicorn

    from .service import SessionHost, build_app

    if backend_kind == "live":
        url = live_url or os.environ.get("MEEP_LIVE_URL")
        if not url:
            raise click.UsageError("--backend live needs --live-url or MEEP_LIVE_URL")
        from .places import HttpPlacesBackend

        backend = HttpPlacesBackend(url, api_key=os.environ.get("MEEP_API_KEY"))
    else:
        backend = _fixture_backend(dataset)

    spool_dir = Path(spool)
    spool_dir.mkdir(parents=True, exist_ok=True)
    host = SessionHost(backend, spool_dir)

    def sweep() -> None:
        import time

        while True:
            time.sleep(sweep_interval)
            for sid in host.sweep_idle():
                click.echo(f"closed idle session {sid}", err=True)

    threading.Thread(target=sweep, daemon=True).start()
    uvicorn.run(build_app(host), host=bind, port=port)


def _load_split(path: str):
    from .synthetic import read_corpus

    logs = read_corpus(path)
    if not logs:
        raise click.UsageError(f"no .log files under {path}")
    return logs


def _named_predictor(name: str, train_logs):
    """Resolve a predictor name; anything unrecognized runs as a command."""
    from .evaluation import SubprocessPredictor, gold_oracle

    if name == "oracle":
        return gold_oracle, None
    if name == "rule":
        from .agent import rule_predictor

        return rule_predictor(), None
    if name in BASELINES:
        from .dataprep import baseline_predictor, corpus_examples

        if name in NEEDS_TRAIN:
            if train_logs is None:
                raise click.UsageError(f"--predictor {name} needs --train")
            return baseline_predictor(name, corpus_examples(train_logs)), None
        return baseline_predictor(name), None
    proc = SubprocessPredictor(name)
    return proc, proc


@cli.command("eval")
@click.option("--predictor", required=True,
              help="oracle, rule, copy_last_query, modal_action, nearest_prefix, or a command to run.")
@click.option("--test", "test_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--train", "train_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Training split for fitted baselines and --curve.")
@click.option("--buckets", is_flag=True, help="Break accuracy down by decision category.")
@click.option("--curve", default=None, help="Comma-separated training fractions, e.g. 0.1,0.25,0.5,1.0.")
@click.option("--seed", default=0, show_default=True, help="Shuffle seed for --curve subsets.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="Write the full report as JSON.")
def eval_cmd(predictor: str, test_dir: str, train_dir: str | None, buckets: bool,
             curve: str | None, seed: int, report_path: str | None) -> None:
    """Teacher-forced scoring of a predictor on a test split."""
    from .evaluation import evaluate, learning_curve

    test_logs = _load_split(test_dir)
    train_logs = _load_split(train_dir) if train_dir else None
    subject, owned = _named_predictor(predictor, train_logs)
    try:
        result = evaluate(subject, test_logs)
    finally:
        if owned is not None:
            owned.close()

    if buckets:
        click.echo(result.format_table())
    else:
        click.echo(f"overall {100 * result.overall.accuracy:.1f}%  n={result.overall.n}")
    for line in result.errors[:10]:
        click.echo(f"predictor error: {line}", err=True)
    if len(result.errors) > 10:
        click.echo(f"... and {len(result.errors) - 10} more", err=True)

    points = None
    if curve:
        if train_logs is None:
            raise click.UsageError("--curve needs --train")
        fractions = [float(f) for f in curve.split(",") if f]

        def factory(subset):
            fitted, _ = _named_predictor(predictor, subset)
            return fitted

        points = learning_curve(factory, train_logs, fractions, test_logs, seed=seed)
        for pt in points:
            click.echo(f"curve {pt.fraction:5.2f}  n={pt.n_dialogs:4d}  overall {100 * pt.accuracy:.1f}%")

    if report_path:
        payload = {
            "predictor": predictor,
            "buckets": {
                name: {"n": b.n, "accuracy": b.accuracy}
                for name, b in [
                    ("overall", result.overall),
                    ("action", result.action),
                    ("query", result.query),
                    ("variable", result.parameter),
                ]
            },
            "errors": result.errors,
        }
        if points is not None:
            payload["curve"] = [
                {"fraction": pt.fraction, "n_dialogs": pt.n_dialogs, "accuracy": pt.accuracy}
                for pt in points
            ]
        Path(report_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"report written to {report_path}")


@cli.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus root holding train/ dev/ test/ subdirectories.")
@click.option("--format", "fmt", type=click.Choice(["bio", "causal"]), required=True)
@click.option("--split", type=click.Choice(["train", "dev", "test"]), required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--use-variable-names", is_flag=True,
              help="Causal params as variable-field names instead of values.")
@click.option("--spaces", is_flag=True, help="Underscores in API names become spaces.")
@click.option("--history", default=10, show_default=True,
              help="Agent items of dialog context kept per BIO example.")
def export(data_dir: str, fmt: str, split: str, out_dir: str,
           use_variable_names: bool, spaces: bool, history: int) -> None:
    """Write training files for one split."""
    from .dataprep import ExportConfig, export_bio, export_causal_text, save_bio, save_causal

    logs = _load_split(str(Path(data_dir) / split))
    config = ExportConfig(
        history=history,
        use_variable_names=use_variable_names,
        underscores_to_spaces=spaces,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "bio":
        result = export_bio(logs, config)
        path = out / f"{split}.jsonl"
        save_bio(result, path)
        click.echo(f"{len(result.examples)} examples -> {path}")
        if result.skipped_queries:
            click.echo(f"skipped {result.skipped_queries} unalignable queries", err=True)
    else:
        examples = [ex for log in logs for ex in export_causal_text(log, config)]
        path = out / f"{split}.txt"
        save_causal(examples, path)
        click.echo(f"{len(examples)} blocks -> {path}")


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--n", "n_dialogs", default=120, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--flat", is_flag=True, help="One directory of logs instead of train/dev/test.")
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), default=None)
def synth(out_dir: str, n_dialogs: int, seed: int, flat: bool, dataset: str | None) -> None:
    """Generate a seeded synthetic corpus (deterministic per seed)."""
    from .places import PlacesDataset
    from .synthetic import (
        CorpusConfig,
        corpus_backend,
        generate_corpus,
        split_corpus,
        write_corpus,
        write_splits,
    )

    data = PlacesDataset.load(dataset) if dataset else None
    backend = corpus_backend(data)
    logs = generate_corpus(backend, CorpusConfig(seed=seed, n_dialogs=n_dialogs))
    if flat:
        write_corpus(logs, out_dir)
        click.echo(f"{len(logs)} logs -> {out_dir}")
    else:
        splits = split_corpus(logs)
        write_splits(splits, out_dir)
        sizes = ", ".join(f"{name} {len(part)}" for name, part in splits.items())
        click.echo(f"{len(logs)} logs -> {out_dir} ({sizes})")


@cli.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), default=None)
def replay(path: str, dataset: str | None) -> None:
    """Validate logs and re-execute their API calls against the fixture."""
    from .logfile import replay as replay_log
    from .logfile import serialize, serialize_session, validate
    from .synthetic import corpus_backend
    from .places import PlacesDataset

    data = PlacesDataset.load(dataset) if dataset else None
    backend = corpus_backend(data)
    target = Path(path)
    files = sorted(target.glob("*.log")) if target.is_dir() else [target]
    if not files:
        raise click.UsageError(f"no .log files under {path}")
    failures = 0
    for file in files:
        text = file.read_text(encoding="utf-8")
        try:
            log = validate(text)
            session = replay_log(log, backend)
        except MeepError as exc:
            failures += 1
            click.echo(f"{file.name}: {type(exc).__name__}: {exc}")
            continue
        if serialize_session(session) != serialize(log):
            failures += 1
            click.echo(f"{file.name}: replay serialization drift")
        else:
            click.echo(f"{file.name}: ok ({len(log.entries)} entries)")
    if failures:
        sys.exit(1)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
