"""Command-line entry point: ``eend <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures (unreadable inputs, numerical problems).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

from .audio import read_wav
from .config import RunConfig
from .exceptions import ConfigurationError, EendError
from .features import LogMelFeaturizer, load_dataset, write_matrix
from .inference import infer_file
from .model import DiarizationModel
from .scoring import aggregate, format_report, parse_report, score_corpus
from .simulation import CorpusPools, build_corpus
from .synthetic import write_synthetic_corpus
from .timeline import parse_rttm, read_rttm
from .training import adapt, train

logger = logging.getLogger("eend")

INCOMPLETE_MARKER = "INCOMPLETE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigurationError(f"input path does not exist: {p}")


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@contextmanager
def _output_dir(path):
    """Mark a directory incomplete until the block finishes without error."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    marker = path / INCOMPLETE_MARKER
    marker.write_text("this directory was not fully written; rerun the command\n")
    yield path
    marker.unlink()


def read_mixture_list(path) -> list[tuple[str, Path, Path | None]]:
    """``id<TAB>wav[<TAB>rttm]`` lines as written by ``simulate``."""
    base = Path(path).parent
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ConfigurationError(f"{path}:{n}: expected id<TAB>wav[<TAB>rttm]")
        rttm = base / parts[2] if len(parts) == 3 else None
        rows.append((parts[0], base / parts[1], rttm))
    return rows


# Subcommands. Each takes (args, cfg) and returns an exit status.

def cmd_synth(args, cfg):
    manifests = write_synthetic_corpus(args.out, n_speakers=args.speakers,
                                       utterances_per_speaker=args.utterances, seed=args.seed)
    for name in ("speakers", "noises", "rirs"):
        print(f"{name}\t{manifests[name]}")
    return 0


def cmd_simulate(args, cfg):
    paths = cfg["paths"]
    if not paths["speakers"] or not paths["rirs"]:
        raise ConfigurationError("paths.speakers and paths.rirs must be set to simulate")
    sim = cfg.simulation()
    noises = paths["noises"] or None
    if sim.noise_enabled and noises is None:
        raise ConfigurationError("paths.noises must be set unless simulation.snr_choices = inf")
    _require(paths["speakers"], paths["rirs"], noises)
    pools = CorpusPools.from_manifests(paths["speakers"], noises, paths["rirs"])
    n = args.n if args.n is not None else cfg["simulation"]["n_mixtures"]
    with _output_dir(args.out) as out:
        manifest, stats = build_corpus(sim, pools, n, out, jobs=args.jobs)
        lines = ["id\toverlap_ratio\ttotal_speech"]
        for line, st in zip(manifest.read_text().splitlines(), stats):
            mid = line.split("\t")[0]
            lines.append(f"{mid}\t{st['overlap_ratio']:.6f}\t{st['total_speech']:.4f}")
        _write_atomic(out / "stats.tsv", "\n".join(lines) + "\n")
        _write_atomic(out / "run.ini", cfg.to_text())
    print(manifest)
    return 0


def _featurize_one(task):
    params, mid, wav, rttm, out = task
    feat = LogMelFeaturizer(**params).fit()
    X = feat.transform_one(read_wav(wav))
    write_matrix(out / f"{mid}.feat", X.astype("<f4"))
    line = f"{mid}.feat"
    if rttm is not None:
        timelines = parse_rttm(Path(rttm).read_text().splitlines())
        timeline = timelines.get(mid) or next(iter(timelines.values()), None)
        if timeline is None:
            raise EendError(f"{rttm}: no segments for {mid}")
        write_matrix(out / f"{mid}.lab", feat.labels_for(timeline, len(X)))
        line += f"\t{mid}.lab"
    return line


def cmd_featurize(args, cfg):
    _require(args.list)
    rows = read_mixture_list(args.list)
    params = cfg["features"]
    with _output_dir(args.out) as out:
        tasks = [(params, mid, wav, rttm, out) for mid, wav, rttm in rows]
        lines = _map(_featurize_one, tasks, args.jobs)
        _write_atomic(out / "features.list", "".join(f"{l}\n" for l in lines))
    print(out / "features.list")
    return 0


def _check_speakers(data, C):
    for X, Y in data:
        if Y.shape[1] != C:
            raise ConfigurationError(
                f"labels have {Y.shape[1]} speakers but model.num_speakers = {C}"
            )


def cmd_train(args, cfg):
    _require(args.data)
    model_cfg = cfg.model()
    data = load_dataset(args.data)
    _check_speakers(data, model_cfg.num_speakers)
    model = DiarizationModel(model_cfg, seed=cfg["model"]["seed"])
    with _output_dir(args.out) as out:
        _write_atomic(out / "run.ini", cfg.to_text())
        train(model, data, cfg.train("train", checkpoint_dir=out))
        model.save(out / "final.ckpt")
    print(out / "final.ckpt")
    return 0


def cmd_adapt(args, cfg):
    _require(args.checkpoint, args.data)
    data = load_dataset(args.data)
    out = Path(args.out)
    log_dir = out.parent / f"{out.stem}.adapt"
    with _output_dir(log_dir):
        adapt(args.checkpoint, data, cfg.train("adapt", checkpoint_dir=log_dir), output_path=out)
    print(out)
    return 0


def _infer_one(task):
    ckpt, wav, mid, threshold, width, params = task
    return infer_file(ckpt, wav, threshold, width, LogMelFeaturizer(**params).fit(), mid)


def cmd_infer(args, cfg):
    _require(args.checkpoint)
    if args.list:
        _require(args.list)
        items = [(mid, wav) for mid, wav, _ in read_mixture_list(args.list)]
    else:
        _require(*args.wav)
        items = [(Path(w).stem, Path(w)) for w in args.wav]
    if not items:
        raise ConfigurationError("no input audio: give --list or WAV paths")
    DiarizationModel.load(args.checkpoint)
    inf = cfg["inference"]
    tasks = [(args.checkpoint, wav, mid, inf["threshold"], inf["median_width"], cfg["features"])
             for mid, wav in items]
    lines = [l for chunk in _map(_infer_one, tasks, args.jobs) for l in chunk]
    text = "".join(f"{l}\n" for l in lines)
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_score(args, cfg):
    _require(args.ref, args.hyp)
    refs = read_rttm(args.ref)
    hyps = read_rttm(args.hyp)
    collar = cfg["scoring"]["collar"] if args.collar is None else args.collar
    per_file, total = score_corpus(refs, hyps, collar)
    if args.out:
        _write_atomic(args.out, format_report(per_file, total))
    print(f"DER {100 * total.der:.2f}\tMI {100 * total.miss:.2f}\t"
          f"FA {100 * total.false_alarm:.2f}\tCF {100 * total.confusion:.2f}")
    return 0


def cmd_report(args, cfg):
    _require(*args.reports)
    rows = ["system\tDER\tMI\tFA\tCF"]
    for path in args.reports:
        total = aggregate(list(parse_report(Path(path).read_text().splitlines()).values()))
        rows.append(f"{Path(path).stem}\t{100 * total.der:.2f}\t{100 * total.miss:.2f}\t"
                    f"{100 * total.false_alarm:.2f}\t{100 * total.confusion:.2f}")
    text = "\n".join(rows) + "\n"
    if args.out:
        _write_atomic(args.out, text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", help="INI run configuration (defaults apply otherwise)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    jobs = _Parser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    p = _Parser(prog="eend", description="End-to-end neural speaker diarization toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common],
                       help="write a synthetic band-noise utterance pool and manifests")
    s.add_argument("--out", required=True, help="directory for WAVs and the three manifests")
    s.add_argument("--speakers", type=int, default=16, help="number of synthetic speakers")
    s.add_argument("--utterances", type=int, default=12, help="utterances per speaker")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", parents=[common, jobs],
                       help="simulate mixtures from the pools named in [paths]")
    s.add_argument("--out", required=True, help="output directory for wav/rttm/recipe files")
    s.add_argument("-n", type=int, help="number of mixtures (default simulation.n_mixtures)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("featurize", parents=[common, jobs],
                       help="compute feature and label matrices for a mixture list")
    s.add_argument("--list", required=True, help="mixtures.list from simulate")
    s.add_argument("--out", required=True, help="output directory; writes features.list")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="train a model on a features.list")
    s.add_argument("--data", required=True, help="features.list (feature<TAB>label lines)")
    s.add_argument("--out", required=True, help="directory for epoch checkpoints and loss.log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("adapt", parents=[common],
                       help="continue training a checkpoint with the [adapt] schedule")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="features.list of the adaptation set")
    s.add_argument("--out", required=True, help="adapted checkpoint path")
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("infer", parents=[common, jobs], help="diarize WAV files to RTTM")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--list", help="mixture list (id<TAB>wav[<TAB>rttm])")
    s.add_argument("--out", help="RTTM output path (default stdout)")
    s.add_argument("wav", nargs="*", help="WAV files, used when --list is not given")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("score", parents=[common], help="score a hypothesis RTTM against a reference")
    s.add_argument("--ref", required=True, help="reference RTTM (may hold many files)")
    s.add_argument("--hyp", required=True, help="hypothesis RTTM")
    s.add_argument("--collar", type=float, help="collar in seconds (default scoring.collar)")
    s.add_argument("--out", help="write the per-file report here")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("report", parents=[common],
                       help="summarize score reports as a DER/MI/FA/CF table")
    s.add_argument("reports", nargs="+", help="report files written by score --out")
    s.add_argument("--out", help="also write the table here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg.override(args.overrides)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigurationError(f"--jobs must be >= 1, got {args.jobs}")
        return args.func(args, cfg)
    except ConfigurationError as exc:
        print(f"eend {args.command}: configuration error: {exc}", file=sys.stderr)
        return 1
    except (EendError, OSError, ValueError) as exc:
        print(f"eend {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
