"""``adk`` command-line entry point.

Exit codes: 0 success, 2 input or schema error, 3 internal invariant
violation. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io as adkio
from .classifier import classify_batch
from .core import DEFAULT_TAU, check_tau
from .diagnostics import (
    CostModelParams,
    CountConvention,
    Method,
    class_prototypes,
    inference_cost,
    map_kld,
    similarity_map,
    top_descriptions,
)
from .errors import ADKError, InvariantViolation, SchemaError
from .evaluation import Scenario, SplitManifest, run_scenario
from .knowledge import build_knowledge, subset_descriptions

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _pct(x):
    return None if x is None else f"{100.0 * x:.1f}"


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")


def _load_bank_and_kb(args):
    """Descriptor bank (subset per flags) plus a knowledge bank consistent with it."""
    _require(args.kb, args.desc)
    kb = adkio.load_knowledge(args.kb)
    full = adkio.bank_from_cache(adkio.read_cache(args.desc), kb.class_names, args.tau)
    if args.m_keep is None:
        m_keep = kb.extra.get("m_keep")
        seed = kb.extra.get("m_sample_seed")
        bank = subset_descriptions(full, m_keep, seed) if m_keep else full
        if kb.source_bank_checksum and kb.source_bank_checksum != bank.checksum:
            raise SchemaError("knowledge bank was built from a different descriptor cache")
        return kb, bank
    bank = subset_descriptions(full, args.m_keep, args.seed if args.m_sample else None)
    return build_knowledge(kb.hand, bank), bank


def cmd_synth(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    ds = adkio.synthesize_dataset(args.n_classes, args.n_descriptions, args.dim, args.images_per_class,
                                  args.separation, args.noise, args.seed, args.tau)
    dtype = adkio.DType.F32 if args.dtype == "f32" else adkio.DType.F64
    ds.images.dtype = dtype
    names = list(ds.class_names)
    n_base = max(1, len(names) // 2) if len(names) > 1 else 1
    files = {
        "descriptions.adkf": adkio.encode_cache(adkio.bank_to_cache(ds.bank, dtype)),
        "hand.adkf": adkio.encode_cache(adkio.hand_to_cache(names, ds.hand, dtype)),
        "images.adkf": adkio.encode_cache(ds.images),
        "descriptions.json": adkio.DescriptionManifest(
            dict(zip(names, ds.bank.descriptions))).to_json().encode("utf-8"),
        "all_to_all.json": _dump(SplitManifest(Scenario.ALL_TO_ALL, names, (), args.shots, args.seed).to_dict()).encode(),
    }
    if len(names) > 1:
        files["base_to_novel.json"] = _dump(SplitManifest(
            Scenario.BASE_TO_NOVEL, names[:n_base], names[n_base:], args.shots, args.seed).to_dict()).encode()
        files["cross_domain.json"] = _dump(SplitManifest(
            Scenario.CROSS_DOMAIN, names[n_base:], (), args.shots, args.seed).to_dict()).encode()
    digests = {}
    for name, data in files.items():
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    sys.stdout.write(_dump({"command": "synth", "N": len(names), "M": args.n_descriptions,
                            "D": args.dim, "images": len(ds.images), "files": digests}))
    return EXIT_OK


def cmd_build_knowledge(args) -> int:
    _require(args.desc, args.hand)
    names, hand = adkio.hand_from_cache(adkio.read_cache(args.hand))
    bank = adkio.bank_from_cache(adkio.read_cache(args.desc), names, args.tau)
    seed = args.seed if args.m_sample else None
    if args.m_keep is not None:
        bank = subset_descriptions(bank, args.m_keep, seed)
    kb = build_knowledge(hand, bank)
    extra = {"m_keep": args.m_keep, "m_sample_seed": seed if args.m_keep is not None else None,
             "n_descriptions": bank.n_descriptions}
    text = adkio.knowledge_to_json(kb, **extra)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(_dump({"command": "build-knowledge", "N": kb.n_classes, "M": bank.n_descriptions,
                            "D": kb.dim, "source_bank_checksum": kb.source_bank_checksum}))
    return EXIT_OK


def cmd_classify(args) -> int:
    _require(args.images)
    kb, bank = _load_bank_and_kb(args)
    ids, feats, labels = adkio.images_from_cache(adkio.read_cache(args.images))
    pred = classify_batch(feats, kb, bank)
    k = min(args.top_k, bank.n_descriptions)
    lines = []
    for i, image_id in enumerate(ids):
        rec = pred.record(i)
        top = top_descriptions(feats[i], bank, rec.predicted, k)
        row = {"image": image_id, "label": None if labels[i] < 0 else int(labels[i]),
               "predicted_class": kb.class_names[rec.predicted], **rec.to_dict(),
               "top_descriptions": top.to_dict()}
        lines.append(json.dumps(row, ensure_ascii=False))
    _emit("".join(line + "\n" for line in lines), args.out)
    if args.out:
        n_lab = int(np.sum(labels >= 0))
        correct = int(np.sum((labels >= 0) & (pred.predicted == labels)))
        sys.stdout.write(_dump({"command": "classify", "images": len(ids), "labelled": n_lab,
                                "correct": correct}))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args.manifest, args.images)
    manifest = SplitManifest.from_dict(json.loads(Path(args.manifest).read_text(encoding="utf-8")))
    kb, bank = _load_bank_and_kb(args)
    _, feats, labels = adkio.images_from_cache(adkio.read_cache(args.images))
    report = run_scenario(manifest, feats, labels, kb, bank)
    doc = report.to_dict()
    doc["display"] = {
        "base_acc": _pct(report.base_acc),
        "novel_acc": _pct(report.novel_acc),
        "harmonic_mean": _pct(report.harmonic_mean),
        "per_head_acc": {p: {h: _pct(a) for h, a in heads.items()} for p, heads in report.per_head_acc.items()},
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


DIAGNOSTICS_SCHEMA = "adk.diagnostics/1"


def cmd_diagnose(args) -> int:
    _require(args.images)
    kb, bank = _load_bank_and_kb(args)
    ids, feats, labels = adkio.images_from_cache(adkio.read_cache(args.images))
    if np.any(labels < 0):
        raise SchemaError("diagnose needs a label for every image")
    protos = class_prototypes(feats, labels, kb.n_classes)
    s_img = similarity_map(protos.vectors)
    s_hand = similarity_map(kb.hand)
    s_comp = similarity_map(kb.comp)
    k = min(args.top_k, bank.n_descriptions)
    attention = []
    for c in range(kb.n_classes):
        i = int(np.flatnonzero(labels == c)[0])
        attention.append({"image": ids[i], "class": kb.class_names[c],
                          **top_descriptions(feats[i], bank, c, k).to_dict()})
    doc = {
        "schema": DIAGNOSTICS_SCHEMA,
        "class_names": list(kb.class_names),
        "kld": {"hand": map_kld(s_hand, s_img), "comp": map_kld(s_comp, s_img)},
        "kld_convention": "row softmax (T=1) over off-diagonal cosines; mean_rows KL(text || image)",
        "similarity_maps": {"hand": s_hand.matrix.tolist(), "comp": s_comp.matrix.tolist(),
                            "image": s_img.matrix.tolist()},
        "attention": attention,
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_cost(args) -> int:
    params = CostModelParams(args.image_gflops, args.text_gflops, args.dim, args.n_classes,
                             args.n_descriptions, CountConvention(args.convention), args.amortize_text)
    rows = {m.value: inference_cost(params, m).to_dict() for m in Method}
    clip = rows["CLIP"]["total"]
    doc = {
        "command": "cost",
        "params": {"N": params.N, "M": params.M, "D": params.D, "convention": params.count_convention.value,
                   "image_encoder_gflops": params.image_encoder_gflops,
                   "text_encoder_gflops_per_prompt": params.text_encoder_gflops_per_prompt,
                   "amortize_text": params.amortize_text},
        "methods": rows,
        "delta_over_clip": {m: rows[m]["total"] - clip for m in rows},
        "table": {m: f"{rows[m]['total']:.3f}" for m in rows},
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


def _positive_float(text: str) -> float:
    try:
        return check_tau(float(text))
    except (ValueError, ADKError) as exc:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tau", type=_positive_float, default=DEFAULT_TAU,
                        help="softmax temperature (similarities are divided by it)")
    common.add_argument("--m-keep", type=int, default=None, help="descriptions kept per class")
    common.add_argument("--m-sample", action="store_true",
                        help="sample the kept descriptions with --seed instead of taking the first ones")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--convention", choices=[c.value for c in CountConvention], default="MAC")
    common.add_argument("--out", default=None, help="output file (directory for synth)")

    parser = argparse.ArgumentParser(prog="adk", description="Auxiliary descriptive knowledge toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fixture")
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--n-descriptions", type=int, default=20)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--images-per-class", type=int, default=32)
    p.add_argument("--separation", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-knowledge", parents=[common], help="average descriptions into a knowledge bank")
    p.add_argument("--desc", required=True)
    p.add_argument("--hand", required=True)
    p.set_defaults(func=cmd_build_knowledge)

    for name, func, helptext in (
        ("classify", cmd_classify, "per-image predictions as JSON lines"),
        ("eval", cmd_eval, "run a split manifest"),
        ("diagnose", cmd_diagnose, "similarity-map KLD and attention report"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--images", required=True)
        p.add_argument("--kb", required=True)
        p.add_argument("--desc", required=True)
        if name == "eval":
            p.add_argument("--manifest", required=True)
        else:
            p.add_argument("--top-k", type=int, default=4)
        p.set_defaults(func=func)

    p = sub.add_parser("cost", parents=[common], help="inference FLOPs table")
    p.add_argument("--n-classes", "-N", type=int, default=500)
    p.add_argument("--n-descriptions", "-M", type=int, default=20)
    p.add_argument("--dim", "-D", type=int, default=512)
    p.add_argument("--image-gflops", type=float, default=33.946)
    p.add_argument("--text-gflops", type=float, default=5.8186)
    p.add_argument("--amortize-text", action="store_true")
    p.set_defaults(func=cmd_cost)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        return _fail(EXIT_INTERNAL, exc)
    except (ADKError, FileNotFoundError, IsADirectoryError, IndexError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INPUT, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_INTERNAL, exc)


if __name__ == "__main__":
    sys.exit(main())
