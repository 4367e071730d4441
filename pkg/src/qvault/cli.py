"""Command-line front end: ``qvault <command> [flags]``.

Exit codes: 0 success, 1 invariant violation or failed acceptance criterion,
2 malformed input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import acceptance, attacks
from .netsim import (AdversaryPolicy, ConfigError, NetworkConfig, ScenarioScript, ScriptError, Transcript,
                     build_simulation, demo_config, fold, run_scenario)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def _summarize(transcript: Transcript) -> bool:
    rep = fold(transcript)
    rows = [["correlation", "process", "outcome", "amount", "serials / reason"]]
    for r in transcript.receipts:
        rows.append([r["correlation_id"], r["process"], r["outcome"], ",".join(map(str, r["amounts"])) or "-",
                     " ".join(r["serials"]) + (f"  ({r['reason']})" if r["reason"] else "")])
    print(_table(rows) if transcript.receipts else "no receipts")
    print()
    totals = [["ledger", "value"], ["ia active", str(rep.ia_active_value)]]
    totals += [[f"custody {m}", str(v)] for m, v in rep.msb_custody.items()]
    totals += [[f"loss {k}", str(v)] for k, v in rep.losses.items() if v]
    print(_table(totals))
    print(f"quiescent: {transcript.quiescent} at tick {transcript.final_tick}")
    print(f"conservation: {'OK' if rep.conservation_ok else 'VIOLATED'} "
          f"(ia {rep.ia_active_value} = custody {rep.custody_total} + losses {rep.injected_loss})")
    print(f"invariants: {'OK' if rep.ok else 'VIOLATED ' + '; '.join(rep.problems())}")
    return rep.ok and transcript.quiescent


def _execute(config: NetworkConfig, script: ScenarioScript, out: str | None, adversary=None) -> int:
    print(f"seed: {config.seed}")
    transcript = run_scenario(build_simulation(config, adversary), script)
    if out:
        transcript.write(out)
        print(f"transcript: {out}")
    return EXIT_OK if _summarize(transcript) else EXIT_VIOLATION


def cmd_run_scenario(args) -> int:
    try:
        config = NetworkConfig.from_json(_read_json(args.config))
        script = ScenarioScript.from_json(_read_json(args.script))
        adversary = AdversaryPolicy.from_json(_read_json(args.adversary)) if args.adversary else None
        if args.seed is not None:
            config = config.with_seed(args.seed)
        return _execute(config, script, args.out, adversary)
    except (ConfigError, ScriptError) as exc:
        raise InputError(str(exc)) from None


def _demo(args, name: str) -> int:
    config = demo_config() if args.seed is None else demo_config(args.seed)
    return _execute(config, ScenarioScript.from_json(acceptance.load_data(f"{name}.json")), args.out)


def cmd_counterfeit(args) -> int:
    print(f"seed: {args.seed}")
    attack = attacks.get_attack(args.attack)
    report = attacks.run_counterfeit_experiment(attack, args.qubits, args.trials, args.seed, workers=args.workers)
    rows = [["attack", "n", "trials", "successes", "estimate", "exact", "stderr", "(3/4)^n"],
            [report.attack, str(report.n), str(report.trials), str(report.successes),
             f"{report.estimated_rate:.6f}", f"{report.exact_rate:.6f}", f"{report.stderr:.6f}",
             f"{0.75 ** report.n:.6f}"]]
    print(_table(rows))
    print(f"deviation: {report.deviation:.2f} standard errors")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2) + "\n")
        print(f"report: {args.out}")
    return EXIT_OK


def cmd_verify_acceptance(args) -> int:
    print(f"seed: {args.seed}")
    results = acceptance.run_all(args.seed, report=lambda r: print(r.line(), flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_VIOLATION if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qvault", description="Quantum-vault digital currency simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run-scenario", help="run a scenario script on a network config")
    p.add_argument("--config", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--adversary", help="optional adversary policy JSON")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--out", help="write the transcript (JSON lines) here")
    p.set_defaults(func=cmd_run_scenario)

    for name, script, text in [("mint-demo", "mint_demo", "mint one note on the demo network"),
                               ("pay-demo", "happy_path", "mint and pass a note between MSBs"),
                               ("online-pay-demo", "online_pay", "pay by destroying and re-minting")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out")
        p.set_defaults(func=lambda a, s=script: _demo(a, s))

    p = sub.add_parser("counterfeit-experiment", help="Monte Carlo cloning attack on Wiesner money")
    p.add_argument("--attack", required=True, choices=["fabricate", "random-basis", "optimal"])
    p.add_argument("--qubits", type=_positive, default=1)
    p.add_argument("--trials", type=_positive, default=10_000)
    p.add_argument("--seed", type=_u64, default=acceptance.DEFAULT_SEED)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_counterfeit)

    p = sub.add_parser("verify-acceptance", help="run the acceptance criteria")
    p.add_argument("--seed", type=_u64, default=acceptance.DEFAULT_SEED)
    p.set_defaults(func=cmd_verify_acceptance)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
