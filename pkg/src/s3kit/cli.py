"""Command-line entry point: ``s3kit {validate,pattern,prune,quote}``.

Exit codes: 0 ok, 1 domain error, 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .errors import S3Error, UnsupportedBits
from .hardware import compression_quote
from .patterns import CATALOG, make_pattern
from .pruners import Method, OrderMode, PruneConfig, prune
from .skt import SktFormatError, read_skt, write_skt
from .spec import SparsitySpec, load_spec_document, validate_document

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(f"s3kit: {msg}", file=sys.stderr)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _load_document(path):
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_IO, f"{path}: malformed JSON: {exc}")
    if not isinstance(obj, dict):
        raise _Fail(EXIT_IO, f"{path}: expected a JSON object")
    try:
        return load_spec_document(obj)
    except (KeyError, TypeError) as exc:
        raise _Fail(EXIT_IO, f"{path}: missing or malformed field {exc}")
    except (S3Error, ValueError) as exc:
        raise _Fail(EXIT_DOMAIN, f"{path}: {exc}")


def _read_tensor(path) -> np.ndarray:
    try:
        return read_skt(path)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}")
    except SktFormatError as exc:
        raise _Fail(EXIT_IO, f"{path}: {exc}")


# --------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    doc = _load_document(args.spec)
    violations = validate_document(doc)
    for v in violations:
        print(v, file=sys.stderr)
    return EXIT_DOMAIN if violations else EXIT_OK


def _parse_dims(items: Sequence[str]) -> dict[str, int]:
    dims = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise _Fail(EXIT_DOMAIN, f"expected DIM=VALUE, got {item!r}")
        try:
            dims[key] = int(value)
        except ValueError:
            raise _Fail(EXIT_DOMAIN, f"{key}: {value!r} is not an integer")
    return dims


def cmd_pattern(args) -> int:
    try:
        doc = make_pattern(args.name, **_parse_dims(args.dims))
    except S3Error as exc:
        raise _Fail(EXIT_DOMAIN, str(exc).strip("'\""))
    print(_dump(doc.to_json()))
    return EXIT_OK


def cmd_quote(args) -> int:
    try:
        quote = compression_quote(args.pattern, args.bits)
    except (UnsupportedBits, ValueError) as exc:
        raise _Fail(EXIT_DOMAIN, str(exc))
    print(_dump(quote.to_json()))
    return EXIT_OK


def resolve_threads(value: Optional[int]) -> int:
    """``--threads``, else ``$S3KIT_THREADS``, else 1; 0 means all CPUs."""
    if value is None:
        env = os.environ.get("S3KIT_THREADS", "").strip()
        try:
            value = int(env) if env else 1
        except ValueError:
            raise _Fail(EXIT_DOMAIN, f"S3KIT_THREADS={env!r} is not an integer")
    if value < 0:
        raise _Fail(EXIT_DOMAIN, f"threads must be >= 0, got {value}")
    return value or (os.cpu_count() or 1)


def cmd_prune(args) -> int:
    outputs = [p for p in (args.out_weights, args.out_mask, args.out_report) if p]
    try:
        _prune(args)
    except BaseException:
        for p in outputs:
            if os.path.exists(p):
                os.remove(p)
        raise
    return EXIT_OK


def _prune(args) -> None:
    doc = _load_document(args.spec)
    if not isinstance(doc, SparsitySpec):
        raise _Fail(EXIT_DOMAIN, "prune needs a single-tensor spec, not a coupling document")
    violations = validate_document(doc)
    if violations:
        raise _Fail(EXIT_DOMAIN, "invalid spec: " + "; ".join(violations))
    W = _read_tensor(args.weights)
    X = _read_tensor(args.calib)
    if W.ndim != 2:
        raise _Fail(EXIT_DOMAIN, f"weights must be M x K, got shape {list(W.shape)}")
    if X.ndim != 2 or X.shape[1] != W.shape[1]:
        raise _Fail(EXIT_DOMAIN, f"calibration shape {list(X.shape)} does not match weights {list(W.shape)}")
    phys = doc.physical
    if phys.size != W.size or (phys.rank == 2 and tuple(phys.shape) != W.shape):
        raise _Fail(EXIT_DOMAIN, f"spec addresses a tensor of shape {list(phys.shape)}, weights are {list(W.shape)}")

    config = PruneConfig(
        method=Method(args.method),
        order_mode=OrderMode(args.order),
        lambda_rel=args.lambda_rel,
        keep=args.keep,
        threads=resolve_threads(args.threads),
    )
    try:
        W_out, mask, report = prune(doc, W, X, config)
    except (S3Error, ValueError) as exc:
        raise _Fail(EXIT_DOMAIN, str(exc))

    if args.out_weights:
        write_skt(args.out_weights, W_out.astype(W.dtype))
    if args.out_mask:
        write_skt(args.out_mask, mask.dense().reshape(W.shape).astype(np.float32), "f32")
    body = report.to_json()
    body.update(
        seed=args.seed,
        shape=list(W.shape),
        keep=doc.keep if args.keep is None else args.keep,
        lambda_rel=args.lambda_rel,
        retained_fraction=float(mask.dense().mean()),
    )
    text = json.dumps(body, sort_keys=True, indent=2) + "\n"
    if args.out_report:
        tmp = f"{args.out_report}.tmp-{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, args.out_report)
    else:
        sys.stdout.write(text)


def cmd_verify(args) -> int:
    from .verification import run_all

    results = run_all(args.scale)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_DOMAIN


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s3kit", description="Structured sparsity specs and block-OBS pruning.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{validate,pattern,prune,quote}")

    v = sub.add_parser("validate", help="check a spec JSON file")
    v.add_argument("spec_path", nargs="?", help="spec JSON (same as --spec)")
    v.add_argument("--spec", dest="spec_flag")
    v.set_defaults(func=cmd_validate)

    pa = sub.add_parser("pattern", help="emit a catalog pattern as spec JSON")
    pa.add_argument("name", help=f"one of: {', '.join(CATALOG)}")
    pa.add_argument("dims", nargs="*", metavar="DIM=VALUE")
    pa.set_defaults(func=cmd_pattern)

    pr = sub.add_parser("prune", help="prune an SKT weight matrix")
    pr.add_argument("--spec", required=True)
    pr.add_argument("--weights", required=True, help="M x K SKT tensor")
    pr.add_argument("--calib", required=True, help="N x K SKT calibration inputs")
    pr.add_argument("--method", choices=[m.value for m in Method], default=Method.S_OBS.value)
    pr.add_argument("--order", choices=[o.value for o in OrderMode], default=OrderMode.GREEDY_RECOMPUTE.value)
    pr.add_argument("--lambda-rel", type=float, default=0.01)
    pr.add_argument("--keep", type=int, default=None, help="override keep from the --spec document")
    pr.add_argument("--out-weights")
    pr.add_argument("--out-mask")
    pr.add_argument("--out-report", help="report JSON path (stdout when omitted)")
    pr.add_argument("--seed", type=int, default=0, help="recorded in the report; pruning is deterministic")
    pr.add_argument("--threads", type=int, default=None, help="0 = all CPUs; falls back to $S3KIT_THREADS")
    pr.set_defaults(func=cmd_prune)

    q = sub.add_parser("quote", help="compressed size of a 2:4 pattern")
    q.add_argument("pattern", choices=["standard_24", "coupled_24"])
    q.add_argument("bits", type=int)
    q.set_defaults(func=cmd_quote)

    ve = sub.add_parser("verify")
    ve.add_argument("--scale", type=float, default=0.1, help="fraction of the full trial counts")
    ve.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        args.spec = args.spec_flag or args.spec_path
        if not args.spec:
            parser.error("validate: a spec path is required")
    try:
        return args.func(args)
    except _Fail as exc:
        _err(str(exc))
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
