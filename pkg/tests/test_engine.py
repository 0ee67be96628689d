"""Closed-form episode economics against the full settlement machinery."""

import pytest

from surety import EngineInconsistency, EpisodePlan, check_episode, ledger_economics, plan_economics


def _plan(**kwargs) -> EpisodePlan:
    base = dict(
        m_minor=1000,
        d_minor=100,
        pi_minor=20,
        adopt=True,
        post=True,
        override_proceed=False,
        fail=False,
    )
    base.update(kwargs)
    return EpisodePlan(**base)


def test_covered_pass_economics():
    econ = plan_economics(_plan())
    assert econ.executed and not econ.cancelled and not econ.failed
    assert econ.user_loss == 0
    assert econ.underwriter_delta == 20  # premium kept


def test_covered_failure_makes_user_whole():
    econ = plan_economics(_plan(fail=True))
    assert econ.failed
    assert econ.user_loss == 0
    # premium in, slash recovered, payout out: 20 - (1000 - 100)
    assert econ.underwriter_delta == 20 - 900


def test_non_adoption_is_inert():
    econ = plan_economics(_plan(adopt=False, fail=True))
    assert econ.executed and econ.failed
    assert econ.user_loss == 1000
    assert econ.underwriter_delta == 0


def test_refusal_without_override_cancels():
    econ = plan_economics(_plan(post=False, override_proceed=False, fail=True))
    assert econ.cancelled and not econ.executed and not econ.failed
    assert econ.user_loss == 0
    assert econ.underwriter_delta == 0


def test_override_proceed_runs_uncovered():
    econ = plan_economics(_plan(post=False, override_proceed=True, fail=True))
    assert econ.executed and econ.failed
    assert econ.user_loss == 1000  # no coverage in force
    assert econ.underwriter_delta == 0  # premium was refunded


def test_zero_collateral_coverage_stays_in_force():
    econ = plan_economics(_plan(d_minor=0, post=False, fail=True))
    # nothing to post, so the posting roll is irrelevant
    assert econ.executed and econ.failed
    assert econ.user_loss == 0
    assert econ.underwriter_delta == 20 - 1000


PATH_SHAPES = [
    dict(),  # covered pass
    dict(fail=True),  # covered failure
    dict(adopt=False),  # no adoption, pass
    dict(adopt=False, fail=True),  # no adoption, failure
    dict(post=False, override_proceed=False),  # refusal, cancelled
    dict(post=False, override_proceed=True),  # override, pass
    dict(post=False, override_proceed=True, fail=True),  # override, failure
    dict(d_minor=0, fail=True),  # zero collateral, covered failure
    dict(pi_minor=0),  # free coverage, pass
]


@pytest.mark.parametrize("shape", PATH_SHAPES)
def test_ledger_replay_matches_closed_form(shape):
    plan = _plan(**shape)
    assert ledger_economics(plan) == plan_economics(plan)
    check_episode(plan)  # raises on any mismatch


def test_check_episode_raises_on_doctored_plan(monkeypatch):
    import surety.engine as engine

    plan = _plan(fail=True)
    real = engine.plan_economics

    def doctored(p):
        econ = real(p)
        return type(econ)(
            executed=econ.executed,
            cancelled=econ.cancelled,
            failed=econ.failed,
            user_loss=econ.user_loss + 1,
            underwriter_delta=econ.underwriter_delta,
        )

    monkeypatch.setattr(engine, "plan_economics", doctored)
    with pytest.raises(EngineInconsistency):
        engine.check_episode(plan)
