"""``cramer-attack`` command line: train, attack, evaluate, playback, metrics.

Configuration is a JSON file. Precedence, lowest first: built-in defaults,
the config file, ``--set key.path=value`` overrides, then dedicated flags
such as ``--seed``. Relative output directories are placed under
``$CRAMER_ATTACK_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, attack, build_reference, pick_nontargeted
from .audio import UnsupportedFormatError, Waveform, distortion_db, read_wav, write_wav
from .cramer import CramerConfig, cramer2_distance, empirical_cdf
from .metrics import REPORT_COLUMNS, build_report, llr, sample_metrics, seg_snr, stoi
from .ota import PlaybackConfig, measure_n_ota, playback, synth_rir
from .victim.corpus import load_manifest, synth_corpus
from .victim.model import VictimModel
from .victim.train import TrainConfig, train_victim

log = logging.getLogger("cramer_attack")

OUTPUT_ROOT_ENV = "CRAMER_ATTACK_OUTPUT_ROOT"
RIR_GRAMMAR = "unit | exp:rt60=<seconds>[,seed=<int>] | file:<path>"

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "corpus": {
        "source": "synthetic",  # or "manifest": a manifest.tsv or a directory holding one
        "path": None,
        "num_utterances": 50,
        "phrase_len_range": [3, 6],
        "seed": 0,
    },
    "checkpoint": None,  # defaults to <output_dir>/victim.bin
    "train": {"epochs": 200, "learning_rate": 0.01, "hidden": 64, "kernel": 3, "jitter": True},
    "samples": {"split": "held_out", "count": None},
    "targets": ["reverse", "nontargeted:1"],
    "modes": ["cramer", "cw"],
    "attack": {
        "epsilon_db": -32.0,
        "loss_scale": 1.0,
        "outer_step": 5e-4,
        "sign_steps": False,
        "inner_step": 1e-3,
        "max_outer_iters": 2000,
        "max_inner_iters": 50,
        "margin_db": 0.1,
        "pcm16": True,
    },
    "ipm": {"domain": "amplitude", "mode": "cramer2", "reference_size_cap": 65536, "seed": 0},
    "playback": {
        "rir": "exp:rt60=0.3,seed=7",
        "noise_snr_db": 30.0,
        "bandpass_khz": None,
        "max_rounds": 10,
    },
    "record_timings": False,
}


class UsageError(Exception):
    """Bad input from the command line or config; exits with status 2."""


# -- configuration ------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise UsageError(f"unknown config key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise UsageError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = _merge(cfg, user)
        base_dir = path.resolve().parent
    for key, value in overrides:
        _set_path(cfg, key, value)
    if not cfg["modes"]:
        raise UsageError("at least one attack mode is required")
    bad = set(cfg["modes"]) - {"cramer", "cw"}
    if bad:
        raise UsageError(f"unknown attack modes {sorted(bad)}")
    if cfg["seed"] is None:
        raise UsageError("a master seed is required")
    cfg["_base_dir"] = str(base_dir)
    return cfg


def config_hash(cfg) -> str:
    """Hash of everything that determines results (paths excluded)."""
    core = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in ("output_dir", "checkpoint", "record_timings")}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()


def output_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not out.is_absolute():
        out = Path(root) / out if root else Path(cfg["_base_dir"]) / out
    return out


def checkpoint_path(cfg) -> Path:
    if cfg["checkpoint"]:
        p = Path(cfg["checkpoint"])
        return p if p.is_absolute() else Path(cfg["_base_dir"]) / p
    return output_dir(cfg) / "victim.bin"


def derived_seed(master: int, *keys: int) -> int:
    """Order-independent per-job seed from the master seed and job indices."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


def _corpus(cfg):
    c = cfg["corpus"]
    if c["source"] == "synthetic":
        return synth_corpus(c["num_utterances"], tuple(c["phrase_len_range"]), c["seed"])
    if c["source"] == "manifest":
        if not c["path"]:
            raise UsageError("corpus.path is required for a manifest corpus")
        p = Path(c["path"])
        p = p if p.is_absolute() else Path(cfg["_base_dir"]) / p
        if p.is_dir():
            p = p / "manifest.tsv"
        if not p.is_file():
            raise UsageError(f"corpus manifest not found: {p}")
        return load_manifest(p)
    raise UsageError(f"unknown corpus source {c['source']!r}")


def _attack_config(cfg, mode, seed) -> AttackConfig:
    return AttackConfig(mode=mode, seed=seed, ipm=CramerConfig(**cfg["ipm"]), **cfg["attack"])


def _playback_config(cfg, seed) -> PlaybackConfig:
    p = cfg["playback"]
    try:
        rir = synth_rir(p["rir"])
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(f"bad RIR descriptor {p['rir']!r}: {exc}; expected {RIR_GRAMMAR}") from None
    band = tuple(p["bandpass_khz"]) if p["bandpass_khz"] else None
    return PlaybackConfig(rir, p["noise_snr_db"], band, seed)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_manifest(out: Path, name: str, cfg, files, timings):
    manifest = {
        "config_hash": config_hash(cfg),
        "tool_version": __version__,
        "files": {f: _sha256(out / f) for f in sorted(files)},
    }
    if cfg["record_timings"]:
        manifest["timings_s"] = timings
    _dump_json(out / name, manifest)


def _saved_config(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# -- train --------------------------------------------------------------------

def cmd_train(cfg) -> int:
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    corpus = _corpus(cfg)
    t = cfg["train"]
    tcfg = TrainConfig(t["epochs"], t["learning_rate"], cfg["seed"], t["hidden"], t["kernel"], t["jitter"])
    lines = []

    def on_epoch(epoch, loss):
        lines.append(f"epoch={epoch} loss={loss!r}")
        log.info("epoch %d loss %.6f", epoch, loss)

    t0 = time.perf_counter()
    model = train_victim(corpus, tcfg, on_epoch=on_epoch)
    ckpt = checkpoint_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    lines.append(f"heldout_wer={model.heldout_wer!r}")
    (out / "train_log.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _dump_json(out / "config.json", _saved_config(cfg))
    files = ["train_log.txt", "config.json"]
    if ckpt.parent == out:
        files.append(ckpt.name)
    _write_manifest(out, "train_manifest.json", cfg, files, {"train": time.perf_counter() - t0})
    if model.heldout_wer is None:
        print("held-out WER: n/a (no held-out split)")
    else:
        print(f"held-out WER: {model.heldout_wer:.2f}%")
    return 0


# -- attack -------------------------------------------------------------------

def _load_model(cfg, corpus) -> VictimModel:
    ckpt = checkpoint_path(cfg)
    if not ckpt.is_file():
        raise UsageError(f"victim checkpoint not found: {ckpt} (run `train` first)")
    model = VictimModel.load(ckpt)
    if model.vocabulary != corpus.vocabulary:
        raise UsageError(f"checkpoint {ckpt} was trained on a different vocabulary than the corpus")
    return model


def _samples(cfg, corpus):
    split = cfg["samples"]["split"]
    items = corpus.items if split == "all" else corpus.split(split)
    count = cfg["samples"]["count"]
    if count is not None:
        items = items[:count]
    if not items:
        raise UsageError(f"no samples in split {split!r}")
    return items


def _targets(cfg, tokens, sample_idx, vocab):
    out = []
    for entry in cfg["targets"]:
        if entry == "reverse":
            out.append(tuple(reversed(tokens)))
        elif entry.startswith("nontargeted:"):
            n = int(entry.split(":", 1)[1])
            for j in range(n):
                seed = derived_seed(cfg["seed"], sample_idx, len(out), j, 1)
                out.append(pick_nontargeted(tokens, vocab, seed))
        else:
            out.append(vocab.encode(entry))
    return out


def _job_key(cfg, ckpt_hash, mode, uid, target_text, seed) -> str:
    parts = [config_hash(cfg), ckpt_hash, mode, uid, target_text, str(seed)]
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()


def cmd_attack(cfg) -> int:
    out = output_dir(cfg)
    corpus = _corpus(cfg)
    model = _load_model(cfg, corpus)
    vocab = corpus.vocabulary
    ckpt_hash = _sha256(checkpoint_path(cfg))
    adir = out / "attacks"
    adir.mkdir(parents=True, exist_ok=True)
    reference = build_reference(model, [it.wave for it in corpus.items], CramerConfig(**cfg["ipm"]))

    files, timings, errors = [], {}, 0
    for mode in cfg["modes"]:
        (adir / mode).mkdir(exist_ok=True)
        for i, item in enumerate(_samples(cfg, corpus)):
            for k, target in enumerate(_targets(cfg, item.tokens, i, vocab)):
                seed = derived_seed(cfg["seed"], i, k)
                stem = f"{mode}/{item.uid}_t{k}"
                rec_path, wav_path = adir / f"{stem}.json", adir / f"{stem}.wav"
                key = _job_key(cfg, ckpt_hash, mode, item.uid, vocab.decode(target), seed)
                if rec_path.is_file():
                    old = json.loads(rec_path.read_text(encoding="utf-8"))
                    if old.get("key") == key and "error" not in old and wav_path.is_file() \
                            and _sha256(wav_path) == old.get("wav_sha256"):
                        log.info("skip %s (done)", stem)
                        files += [f"{stem}.json", f"{stem}.wav"]
                        continue
                rec = {
                    "key": key, "mode": mode, "uid": item.uid, "sample_index": i, "experiment": k,
                    "reference": vocab.decode(item.tokens), "seed": seed,
                }
                t0 = time.perf_counter()
                try:
                    res = attack(model, item.wave, target, reference, _attack_config(cfg, mode, seed))
                except (ValueError, FloatingPointError) as exc:
                    errors += 1
                    rec.update(target=vocab.decode(target), error=f"{type(exc).__name__}: {exc}")
                    log.error("%s: %s", stem, rec["error"])
                    _dump_json(rec_path, rec)
                    files.append(f"{stem}.json")
                    continue
                timings[stem] = time.perf_counter() - t0
                write_wav(wav_path, res.x_adv)
                rec.update(res.record(vocab))
                rec["wav"] = f"{stem}.wav"
                rec["wav_sha256"] = _sha256(wav_path)
                _dump_json(rec_path, rec)
                files += [f"{stem}.json", f"{stem}.wav"]
                log.info("%s %s -> %s: %s (%.2f dB)", stem, rec["reference"], rec["target"],
                         res.success, res.final_distortion_db)
    _write_manifest(adir, "manifest.json", cfg, files, timings)
    print(f"{len(files) - sum(f.endswith('.wav') for f in files)} attack records in {adir}")
    return 1 if errors else 0


# -- evaluate -----------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_evaluate(cfg) -> int:
    out = output_dir(cfg)
    adir = out / "attacks"
    man_path = adir / "manifest.json"
    if not man_path.is_file():
        raise UsageError(f"attack outputs not found: {man_path} (run `attack` first)")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    if manifest["config_hash"] != config_hash(cfg):
        raise UsageError(f"{man_path} was produced with a different configuration")
    corpus = _corpus(cfg)
    model = _load_model(cfg, corpus)
    vocab = corpus.vocabulary
    by_uid = {it.uid: it for it in corpus.items}

    per_mode: dict[str, list] = {}
    cramer2: dict[str, list] = {}
    for name in sorted(manifest["files"]):
        if not name.endswith(".json"):
            continue
        rec = json.loads((adir / name).read_text(encoding="utf-8"))
        if "error" in rec:
            continue
        wav = adir / rec["wav"]
        if not wav.is_file() or _sha256(wav) != manifest["files"].get(rec["wav"]):
            raise UsageError(f"attack output missing or modified: {wav}")
        x_adv = read_wav(wav)
        x_org = by_uid[rec["uid"]].wave
        target = vocab.encode(rec["target"])
        pcfg = _playback_config(cfg, derived_seed(cfg["seed"], rec["sample_index"], rec["experiment"], 2))
        rob = measure_n_ota(model, x_adv, target, pcfg, cfg["playback"]["max_rounds"])
        m = sample_metrics(rec["mode"], rec["uid"], rec["experiment"], rec["reference"], rec["target"],
                           model.transcribe_text(x_adv), x_org, x_adv, rob.n_ota)
        per_mode.setdefault(rec["mode"], []).append(m)
        cramer2.setdefault(rec["mode"], []).append(rec["final_cramer2"])
    if not per_mode:
        raise UsageError("no successful attack records to evaluate")

    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    reports = {mode: build_report(recs) for mode, recs in sorted(per_mode.items())}
    summary_cols = list(REPORT_COLUMNS) + ["final_cramer2", "sample_count", "wer_sentence_mean"]
    sample_cols = ["mode", "sample_id", "experiment", "reference", "target", "transcript", "wer_pct",
                   "edit_errors", "ref_words", "hit", "seg_snr_db", "stoi", "llr", "llr_raw", "n_ota"]
    with open(rdir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(summary_cols)
        for mode, rep in reports.items():
            row = rep.row()
            row.update(final_cramer2=float(np.mean(cramer2[mode])), sample_count=rep.sample_count,
                       wer_sentence_mean=rep.wer_sentence_mean)
            w.writerow([_fmt(row[c]) for c in summary_cols])
    with open(rdir / "per_sample.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample_cols)
        for rep in reports.values():
            for r in rep.records:
                w.writerow([_fmt(getattr(r, c)) for c in sample_cols])
    structured = {
        mode: {
            "aggregate": {**rep.row(), "final_cramer2": float(np.mean(cramer2[mode])),
                          "sample_count": rep.sample_count, "wer_sentence_mean": rep.wer_sentence_mean},
            "records": [{c: getattr(r, c) for c in sample_cols} for r in rep.records],
        }
        for mode, rep in reports.items()
    }
    _dump_json(rdir / "report.json", structured)
    _write_manifest(rdir, "manifest.json", cfg, ["summary.csv", "per_sample.csv", "report.json"], {})
    for mode, rep in reports.items():
        print(f"{mode:>7}: WER {rep.wer_pct:.2f}±{rep.wer_std:.2f}  SLA {rep.sla_pct:.2f}±{rep.sla_std:.2f}  "
              f"segSNR {rep.seg_snr_db:.2f}  STOI {rep.stoi:.3f}  LLR {rep.llr:.3f}  n_ota {rep.n_ota:.2f}")
    return 0


# -- playback / metrics -------------------------------------------------------

def cmd_playback(args) -> int:
    try:
        rir = synth_rir(args.rir)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(f"bad RIR descriptor {args.rir!r}: {exc}; expected {RIR_GRAMMAR}") from None
    band = None
    if args.bandpass:
        try:
            band = tuple(float(v) for v in args.bandpass.split(","))
            assert len(band) == 2
        except (ValueError, AssertionError):
            raise UsageError("--bandpass expects '<low_khz>,<high_khz>'") from None
    w = read_wav(args.input)
    try:
        out = playback(w, PlaybackConfig(rir, args.snr, band, args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_wav(args.output, out)
    return 0


def cmd_metrics(args) -> int:
    a, b = read_wav(args.original), read_wav(args.adversarial)
    if len(a) != len(b):
        raise UsageError(f"length mismatch: {len(a)} vs {len(b)} samples")
    delta = Waveform(b.samples - a.samples, a.sample_rate_hz)
    res = {
        "distortion_db": distortion_db(delta, a),
        "seg_snr_db": seg_snr(a, b),
        "stoi": stoi(a, b),
        "llr": llr(a, b),
        "cramer2": cramer2_distance(empirical_cdf(a.samples), empirical_cdf(b.samples)),
    }
    print(json.dumps(res, sort_keys=True))
    return 0


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cramer-attack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (dotted path; JSON value)")
        sp.add_argument("--seed", type=int, help="master seed (key: seed)")
        sp.add_argument("--output-dir", help="output directory (key: output_dir)")
        sp.add_argument("--checkpoint", help="victim checkpoint path (key: checkpoint)")
        return sp

    experiment("train", "train the victim model")
    sp = experiment("attack", "run the configured attacks")
    sp.add_argument("--modes", help="comma-separated attack modes (key: modes)")
    sp.add_argument("--max-outer-iters", type=int, help="key: attack.max_outer_iters")
    experiment("evaluate", "score attack outputs and simulate playback")

    sp = sub.add_parser("playback", help="apply simulated playback to one WAV")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--rir", default="unit", help=f"impulse response: {RIR_GRAMMAR}")
    sp.add_argument("--snr", type=float, default=None, help="noise SNR in dB (default: no noise)")
    sp.add_argument("--bandpass", default=None, help="'<low_khz>,<high_khz>'")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("metrics", help="quality metrics between two WAVs")
    sp.add_argument("original")
    sp.add_argument("adversarial")
    return p


def _overrides(args):
    out = []
    for item in args.set:
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out.append((key.strip(), _parse_value(val)))
    if args.seed is not None:
        out.append(("seed", args.seed))
    if args.output_dir is not None:
        out.append(("output_dir", args.output_dir))
    if args.checkpoint is not None:
        out.append(("checkpoint", args.checkpoint))
    if getattr(args, "modes", None):
        out.append(("modes", [m.strip() for m in args.modes.split(",") if m.strip()]))
    if getattr(args, "max_outer_iters", None) is not None:
        out.append(("attack.max_outer_iters", args.max_outer_iters))
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "playback":
            return cmd_playback(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        cfg = load_config(args.config, _overrides(args))
        return {"train": cmd_train, "attack": cmd_attack, "evaluate": cmd_evaluate}[args.command](cfg)
    except UsageError as exc:
        print(f"cramer-attack: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, UnsupportedFormatError) as exc:
        print(f"cramer-attack: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
