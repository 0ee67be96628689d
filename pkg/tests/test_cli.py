"""End-to-end checks of the command line front end.

Everything drives ``surety.cli.main`` in process; one test exercises the
installed console script.
"""

import json
import subprocess
import sys

import pytest

from surety import Keyring, StructuredAgreement, canonical_hash
from surety.cli import main

from conftest import build_agreement


def _write(path, data) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _episode_script(job_id: str = "job-9") -> dict:
    agreement = build_agreement(job_id=job_id)
    draft = agreement.to_dict()
    bound = canonical_hash(agreement)
    # the underwriter's signed approval doubles as its release vote
    u_token = Keyring.demo(["uw-x"]).sign("uw-x", job_id, bound)

    def act(kind, sender_id, role, payload, signature=None):
        return {
            "kind": kind,
            "sender": {"id": sender_id, "role": role},
            "payload": {"job_id": job_id, **payload},
            "signature": signature,
        }

    bound_payload = {"agreement_hash": "auto"}
    return {
        "job_id": job_id,
        "parties": {
            "hana": "human_requestor",
            "shopbot": "business_agent",
            "uw-x": "underwriter",
            "eval-x": "evaluator",
            "settle-x": "settlement",
        },
        "endowments": {
            f"escrow:{job_id}": 0,
            f"collateral:{job_id}": 0,
            "wallet:hana": 1220,
            "wallet:shopbot": 100,
            "treasury:uw-x": 0,
        },
        "actions": [
            act(
                "SubmitRequest",
                "hana",
                "human_requestor",
                {
                    "task_spec": draft["task_spec"],
                    "fee_terms": draft["fee_terms"],
                    "principal_terms": draft["principal_terms"],
                },
            ),
            act("AcceptRequest", "shopbot", "business_agent", {"decision": "accept"}),
            act("ProposeAgreement", "shopbot", "business_agent", {"agreement_draft": draft}),
            act("SignAgreement", "hana", "human_requestor", dict(bound_payload)),
            act("SignAgreement", "shopbot", "business_agent", dict(bound_payload)),
            act(
                "LockFeeEscrow",
                "hana",
                "human_requestor",
                {**bound_payload, "lock_ref": f"{job_id}.fee-lock"},
                "auto",
            ),
            act(
                "RequestUW",
                "shopbot",
                "business_agent",
                {**bound_payload, "coverage_request": {"principal": 1000}},
            ),
            act(
                "UWDecision",
                "uw-x",
                "underwriter",
                {**bound_payload, "decision": "approve", "premium": 20, "collateral_required": 100},
                "auto",
            ),
            act(
                "PayPremium",
                "hana",
                "human_requestor",
                {**bound_payload, "premium": 20, "premium_ref": f"{job_id}.premium"},
                "auto",
            ),
            act(
                "LockCollateral",
                "shopbot",
                "business_agent",
                {**bound_payload, "amount": 100, "collateral_ref": f"{job_id}.collateral"},
                "auto",
            ),
            act(
                "ReleasePrincipal",
                "settle-x",
                "settlement",
                {**bound_payload, "approvals": [u_token], "transfer_ref": f"{job_id}.transfer"},
            ),
            act(
                "SubmitExecutionEvidence",
                "shopbot",
                "business_agent",
                {**bound_payload, "exec_evidence_ref": f"{job_id}.evidence"},
                "auto",
            ),
            act(
                "SubmitDeliverable",
                "shopbot",
                "business_agent",
                {**bound_payload, "deliverable_ref": f"{job_id}.deliverable"},
                "auto",
            ),
            act("EvaluateOutcome", "eval-x", "evaluator", {**bound_payload, "outcome": "pass"}),
            act(
                "SettleFeeEscrow",
                "settle-x",
                "settlement",
                {**bound_payload, "disposition": "release", "settlement_ref": f"{job_id}.fee-settle"},
            ),
            act(
                "SettleCollateral",
                "settle-x",
                "settlement",
                {**bound_payload, "disposition": "unlock", "amount": 100, "settlement_ref": f"{job_id}.coll-settle"},
            ),
        ],
    }


# -- validate -----------------------------------------------------------------


def test_validate_ok(tmp_path, capsys):
    cfg = _write(tmp_path / "cfg.json", {"kind": "lambda", "episodes": 50, "seed": 9})
    assert main(["validate", cfg]) == 0
    out = capsys.readouterr().out
    assert "ok: kind=lambda episodes=50 seed=9" in out
    assert "config_digest: sha256:" in out


def test_validate_rejects_unknown_field(tmp_path, capsys):
    cfg = _write(tmp_path / "cfg.json", {"episode": 50})
    assert main(["validate", cfg]) == 2
    assert "unknown config fields" in capsys.readouterr().err


def test_validate_rejects_broken_json(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["validate", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_missing_file_is_a_runtime_error(capsys):
    assert main(["validate", "/no/such/file.json"]) == 2
    assert "cannot read" in capsys.readouterr().err


# -- usage errors -----------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        ["sweep", "--what"],
        ["sweep", "--kind", "delta"],
        ["replay"],
        [],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    capsys.readouterr()


# -- sweep ------------------------------------------------------------------------


@pytest.mark.parametrize("kind,cells", [("lambda", 11), ("fpfn", 36), ("sigmoid", 20)])
def test_sweep_row_counts(kind, cells, tmp_path, capsys):
    out = tmp_path / "report.csv"
    assert main(["sweep", "--kind", kind, "--episodes", "150", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 6 + cells
    assert f"# kind: {kind}" in lines
    assert f"wrote {cells} cells" in capsys.readouterr().err


def test_sweep_stdout_matches_file_and_repeats(tmp_path, capsys):
    cfg = _write(
        tmp_path / "cfg.json",
        {"kind": "lambda", "episodes": 200, "seed": 3, "lambda_grid": [0.0, 0.5]},
    )
    out = tmp_path / "report.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["sweep", "--config", cfg]) == 0
    assert capsys.readouterr().out == out.read_text(encoding="utf-8")


def test_sweep_cli_overrides_win_over_config(tmp_path):
    cfg = _write(
        tmp_path / "cfg.json",
        {"kind": "fpfn", "episodes": 200, "seed": 3, "lambda_grid": [0.0, 0.5]},
    )
    out = tmp_path / "report.csv"
    assert main(["sweep", "--config", cfg, "--kind", "lambda", "--seed", "4", "--episodes", "180", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[1] == "# kind: lambda"
    assert lines[2] == "# seed: 4"
    assert lines[3] == "# episodes: 180"
    assert len(lines) == 6 + 2  # the config file's grid still applies


def test_sweep_engine_mode_writes_identical_report(tmp_path):
    cfg = _write(
        tmp_path / "cfg.json",
        {"kind": "lambda", "episodes": 120, "seed": 3, "lambda_grid": [0.0, 0.5]},
    )
    eq, en = tmp_path / "eq.csv", tmp_path / "en.csv"
    assert main(["sweep", "--config", cfg, "--mode", "equations", "--out", str(eq)]) == 0
    assert main(["sweep", "--config", cfg, "--mode", "engine", "--out", str(en)]) == 0
    assert eq.read_bytes() == en.read_bytes()


# -- episode and replay --------------------------------------------------------------


def test_episode_runs_to_close_and_replays(tmp_path, capsys):
    script = _write(tmp_path / "script.json", _episode_script())
    log = tmp_path / "events.jsonl"
    assert main(["episode", script, "--log", str(log)]) == 0
    out = capsys.readouterr().out
    assert "final phase: CLOSED" in out
    assert "balances:" in out
    # fee and principal both ended with the provider
    assert "wallet:shopbot = 1300" in out

    assert main(["replay", str(log)]) == 0
    out = capsys.readouterr().out
    assert "byte-for-byte" in out and "CLOSED" in out


def test_replay_flags_tampered_log(tmp_path, capsys):
    script = _write(tmp_path / "script.json", _episode_script())
    log = tmp_path / "events.jsonl"
    assert main(["episode", script, "--log", str(log)]) == 0
    capsys.readouterr()

    lines = log.read_text(encoding="utf-8").splitlines()
    last = json.loads(lines[-1])
    last["phase"] = "EVALUATION"  # the machine will recompute CLOSED
    lines[-1] = json.dumps(last, separators=(",", ":"))
    log.write_text("\n".join(lines) + "\n", encoding="utf-8")

    assert main(["replay", str(log)]) == 2
    err = capsys.readouterr().err
    assert "divergence" in err


def test_replay_rejects_empty_log(tmp_path, capsys):
    log = tmp_path / "events.jsonl"
    log.write_text("", encoding="utf-8")
    assert main(["replay", str(log)]) == 2
    assert "empty" in capsys.readouterr().err


def test_episode_script_validation(tmp_path, capsys):
    script = _write(tmp_path / "script.json", {"job_id": "j", "actions": []})
    assert main(["episode", script]) == 2
    assert "parties" in capsys.readouterr().err


def test_episode_rejected_action_exits_2(tmp_path, capsys):
    data = _episode_script()
    # skip straight to a transaction action: not enabled on a fresh job
    data["actions"] = data["actions"][5:6]
    script = _write(tmp_path / "script.json", data)
    assert main(["episode", script]) == 2
    assert "error:" in capsys.readouterr().err


# -- console script --------------------------------------------------------------


def test_console_script_entry_point(tmp_path):
    cfg = _write(tmp_path / "cfg.json", {"kind": "lambda", "episodes": 50})
    proc = subprocess.run(
        [sys.executable, "-m", "surety.cli", "validate", cfg],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "config_digest" in proc.stdout
