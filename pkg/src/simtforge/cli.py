"""Command-line driver: ``simtforge <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime error (including malformed
input), 3 property violation (verifier findings, mismatches, uniformity
violations), 4 pass error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .ir import Module, Stage
from .normalize import PipelineConfig, StructurizeError
from .parser import ParseError, parse_module
from .printer import print_module

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PROPERTY, EXIT_PASS = range(5)

CONFIG_KEYS = {
    "zicond": bool, "recon": bool, "annotations": bool, "repair": bool,
    "warp_size": int, "warp_count": int, "mem_words": int,
}


class UsageError(Exception):
    pass


def read_config_file(path: str) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment, section headers are ignored."""
    out: dict = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        val = val.strip('"')
        if CONFIG_KEYS[key] is bool:
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}:{n}: {key} expects true or false")
            out[key] = val.lower() in ("true", "1", "yes")
        else:
            try:
                out[key] = int(val, 0)
            except ValueError:
                raise UsageError(f"{path}:{n}: {key} expects an integer") from None
    return out


def config_from_args(ns: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then explicit flags."""
    values = read_config_file(ns.config) if getattr(ns, "config", None) else {}
    flags = {
        "zicond": getattr(ns, "zicond", None),
        "recon": getattr(ns, "recon", None),
        "annotations": getattr(ns, "annotations", None),
        "repair": getattr(ns, "repair", None),
        "warp_count": getattr(ns, "warps", None),
        "warp_size": getattr(ns, "threads", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return PipelineConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_assignments(items: list[str] | None, what: str) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"{what} expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().lstrip("%")] = v.strip()
    return out


def parse_int(text: str, what: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise UsageError(f"{what}: {text!r} is not an integer") from None


def read_words(path: str) -> list[int]:
    """Words of an init file: whitespace separated, decimal or 0x-prefixed hex."""
    return [int(tok, 0) for tok in Path(path).read_text(encoding="utf-8").split()]


def load_module(path: str) -> Module:
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return parse_module(text)


def emit(text: str, out: str | None) -> None:
    if out and out != "-":
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def add_pipeline_flags(p: argparse.ArgumentParser, warps: bool = True) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="key = value file; explicit flags win")
    g.add_argument("--zicond", action="store_true", default=None, help="keep selects as cmov")
    g.add_argument("--no-recon", dest="recon", action="store_false", default=None,
                   help="skip CFG reconstruction")
    g.add_argument("--no-annotations", dest="annotations", action="store_false", default=None,
                   help="ignore assume_uniform and uniform-flagged params")
    g.add_argument("--no-repair", dest="repair", action="store_false", default=None,
                   help="skip the late-phase repair pass")
    if warps:
        g.add_argument("--warps", type=int, help="warp count")
        g.add_argument("--threads", type=int, help="threads per warp")


def replace_cfg(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return dataclasses.replace(cfg, **kw)


def is_lowered(m: Module) -> bool:
    return m.stage is Stage.LOWERED


# ---------------------------------------------------------------------------
# commands


def cmd_check(ns) -> int:
    from .verify import verify_module

    m = load_module(ns.file)
    bad = verify_module(m)
    for v in bad:
        print(v)
    if bad:
        return EXIT_PROPERTY
    print(f"ok: {len(m.functions)} function(s), stage {m.stage.value}")
    return EXIT_OK


def cmd_analyze(ns) -> int:
    from .dumps import dump

    m = load_module(ns.file)
    sys.stdout.write(dump(m, ns.dump, annotations=not ns.no_annotations))
    return EXIT_OK


def cmd_lower(ns) -> int:
    from .pipeline import run_pipeline

    cfg = config_from_args(ns)
    res = run_pipeline(load_module(ns.file), cfg, stop_after=ns.stop_after)
    emit(print_module(res.module), ns.output)
    if ns.log:
        emit(dumps([r.to_json() for r in res.log]), ns.log)
    return EXIT_OK


def _lowered_for_run(m: Module, cfg: PipelineConfig):
    """A Lowered module and its static uniform sets; High input is lowered first."""
    if is_lowered(m):
        return m, None
    from .pipeline import run_pipeline

    res = run_pipeline(m, cfg)
    return res.module, res.uniform


def _launch_plan(ns, m: Module, cfg: PipelineConfig):
    from .launch import plan_launch

    args = {k: parse_int(v, "--arg") for k, v in parse_assignments(ns.arg, "--arg").items()}
    sizes, inits = {}, {}
    for name, spec in parse_assignments(ns.buf, "--buf").items():
        size, _, init = spec.partition(":")
        sizes[name] = parse_int(size, "--buf")
        if init:
            inits[name] = read_words(init)
    try:
        return plan_launch(m.kernel, cfg, args, ns.seed, sizes, inits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _mem_range(text: str, words: int) -> range:
    lo, sep, hi = text.partition(":")
    start = parse_int(lo, "--mem-dump") if lo else 0
    stop = parse_int(hi, "--mem-dump") if sep and hi else (start + 1 if not sep else words)
    if not 0 <= start <= stop <= words:
        raise UsageError(f"--mem-dump {text!r} is outside memory of {words} words")
    return range(start, stop)


def cmd_run(ns) -> int:
    from .sim import Launch, UniformityViolation, run_simt

    cfg = config_from_args(ns)
    src = load_module(ns.file)
    low, uniform = _lowered_for_run(src, cfg)
    plan = _launch_plan(ns, low, cfg)
    try:
        result = run_simt(low, plan.cfg, plan.args, plan.mem_init, Launch(ns.launch), uniform)
    except UniformityViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    if ns.metrics:
        emit(result.metrics.to_json(), ns.metrics)
    if ns.mem_dump:
        for i in _mem_range(ns.mem_dump, len(result.memory)):
            print(f"{int(result.memory[i]):08x}")
    elif not ns.metrics:
        sys.stdout.write(result.metrics.to_json())
    for v in result.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_PROPERTY if result.violations else EXIT_OK


def cmd_compare(ns) -> int:
    from .harness import compare

    cfg = config_from_args(ns)
    m = load_module(ns.file)
    if is_lowered(m):
        raise UsageError("compare needs a High-stage module (the oracle runs the source)")
    args = {k: parse_int(v, "--arg") for k, v in parse_assignments(ns.arg, "--arg").items()}
    r = compare(m, cfg, args, ns.seed)
    print(r.verdict.value)
    sys.stdout.write(dumps(r.to_json()))
    return EXIT_OK if r.ok else (EXIT_RUNTIME if r.verdict.value == "Error" else EXIT_PROPERTY)


def cmd_perturb(ns) -> int:
    from .late import NoApplicableSite, perturb_module

    cfg = config_from_args(ns)
    m = load_module(ns.file)
    if not is_lowered(m):
        from .pipeline import run_pipeline

        m = run_pipeline(m, replace_cfg(cfg, repair=False)).module
    try:
        where = perturb_module(m, ns.mode, ns.seed)
    except NoApplicableSite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(where, file=sys.stderr)
    emit(print_module(m), ns.output)
    return EXIT_OK


def cmd_repair(ns) -> int:
    from .late import repair_divergence
    from .verify import verify_module

    m = load_module(ns.file)
    if not is_lowered(m):
        raise UsageError("repair works on Lowered modules")
    for f in m.functions:
        for line in repair_divergence(f):
            print(f"@{f.name}{line}", file=sys.stderr)
    emit(print_module(m), ns.output)
    bad = verify_module(m)
    for v in bad:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_PROPERTY if bad else EXIT_OK


def cmd_fuzz(ns) -> int:
    from .fuzz import fuzz_kernels
    from .harness import WARP_CONFIGS

    cfg = config_from_args(ns)
    if ns.all_configs:
        configs = WARP_CONFIGS
    else:
        configs = ((cfg.warp_count if ns.warps else 4, cfg.warp_size if ns.threads else 8),)
    mutate = None
    if ns.perturb:
        mutate = _Perturber(ns.perturb, ns.seed)
    report = fuzz_kernels(ns.seed, ns.count, cfg, configs, jobs=ns.jobs, mutate=mutate)
    if ns.output:
        emit(report.to_json(), ns.output)
    print(f"{report.passed}/{report.count} Match")
    for c in report.failures:
        print(f"  kernel {c.index} (seed {c.seed}): {c.verdict} {'; '.join(c.report[:2])}")
    return EXIT_OK if not report.failures else EXIT_PROPERTY


class _Perturber:
    """Applies one seeded hazard to each lowered fuzz kernel, skipping kernels without a site."""

    def __init__(self, mode: str, seed: int):
        self.mode, self.seed = mode, seed

    def __call__(self, m: Module) -> None:
        from .late import NoApplicableSite, perturb_module

        try:
            perturb_module(m, self.mode, self.seed)
        except NoApplicableSite:
            pass


def cmd_metrics_diff(ns) -> int:
    a = json.loads(Path(ns.a).read_text(encoding="utf-8"))
    b = json.loads(Path(ns.b).read_text(encoding="utf-8"))
    a, b = a.get("simulator", a), b.get("simulator", b)
    keys = sorted(k for k in set(a) & set(b) if isinstance(a[k], (int, float)) and isinstance(b[k], (int, float)))
    width = max([len(k) for k in keys] + [6])
    print(f"{'metric':<{width}}  {'a':>12}  {'b':>12}  {'a/b':>10}")
    for k in keys:
        ratio = f"{a[k] / b[k]:.4f}" if b[k] else "-"
        print(f"{k:<{width}}  {a[k]:>12}  {b[k]:>12}  {ratio:>10}")
    if not b.get("dyn_instrs"):
        raise UsageError("second metrics file has no dyn_instrs")
    print(f"reduction factor: {a['dyn_instrs'] / b['dyn_instrs']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    from .dumps import DUMPS
    from .late import Mode
    from .pipeline import STOP_NAMES
    from .sim import Launch

    ap = argparse.ArgumentParser(prog="simtforge", description="SIMT divergence-management compiler toolkit")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("check", help="parse and verify a .vir file")
    p.add_argument("file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("analyze", help="print an analysis table")
    p.add_argument("file")
    p.add_argument("--dump", choices=DUMPS, default="uniformity")
    p.add_argument("--no-annotations", action="store_true", help="uniformity without annotations")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("lower", help="run the pass pipeline")
    p.add_argument("file")
    p.add_argument("-o", "--output", help="output .vir (default stdout)")
    p.add_argument("--stop-after", choices=STOP_NAMES, help="emit the module after this pass")
    p.add_argument("--log", help="write the pass log as JSON here ('-' for stdout)")
    add_pipeline_flags(p, warps=False)
    p.set_defaults(func=cmd_lower)

    p = sub.add_parser("run", help="run a kernel on the lockstep simulator")
    p.add_argument("file")
    p.add_argument("--arg", action="append", metavar="NAME=VALUE", help="i32 argument")
    p.add_argument("--buf", action="append", metavar="NAME=SIZE[:INITFILE]", help="buffer size and contents")
    p.add_argument("--launch", choices=[x.value for x in Launch], default="kernel")
    p.add_argument("--mem-dump", metavar="START:END", help="print memory words as hex, one per line")
    p.add_argument("--metrics", help="write metrics JSON here")
    p.add_argument("--seed", type=int, default=0, help="seed for buffer contents")
    add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="lower, run simulator and oracle, and diff")
    p.add_argument("file")
    p.add_argument("--arg", action="append", metavar="NAME=VALUE")
    p.add_argument("--seed", type=int, default=0)
    add_pipeline_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("perturb", help="inject one late-phase hazard")
    p.add_argument("file")
    p.add_argument("--mode", choices=[x.value for x in Mode], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    add_pipeline_flags(p, warps=False)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("repair", help="restore split/branch pairing in a Lowered module")
    p.add_argument("file")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("fuzz", help="differential test on generated kernels")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--all-configs", action="store_true", help="1x4, 4x8 and 16x32")
    p.add_argument("--perturb", choices=[x.value for x in Mode], help="inject a hazard into every kernel")
    p.add_argument("-o", "--output", help="write the JSON report here")
    add_pipeline_flags(p)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("metrics-diff", help="compare two metrics JSON files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_metrics_diff)
    return ap


def main(argv: list[str] | None = None) -> int:
    from .pipeline import PassError
    from .sim import SimError

    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PassError, StructurizeError) as exc:
        name = getattr(exc, "pass_name", "structurize")
        print(f"pass error [{name}]: {exc}", file=sys.stderr)
        return EXIT_PASS
    except (ParseError, SimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
