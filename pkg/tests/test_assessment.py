import math

import pytest

from imeac.core.assessment import (
    PENDING,
    AnalysisSettings,
    AssessmentError,
    BracketError,
    Verdict,
    assess,
    assess_clearing,
    assess_subset,
    cct_bisect,
    omib_critical_clearing_time,
    theta_oracle,
)
from imeac.core.kimbark import EventKind, SwingEvent

SETTINGS = AnalysisSettings(step=1e-3, t_end=1.0, horizon_extensions=0)


def _event(machine, kind, time):
    return SwingEvent(
        machine_id=machine,
        kind=EventKind(kind),
        time=time,
        theta=1.0,
        residual_ke=0.0,
        a_acc=1.0,
        a_dec=1.0,
    )


def test_any_liberation_is_unstable():
    events = {
        38: _event(38, "DLP", 0.51),
        34: _event(34, "DSP", 0.40),
        36: _event(36, "DLP", 0.62),
    }
    report = assess(events, (38, 34, 36))
    assert report.verdict is Verdict.UNSTABLE
    assert report.verdict_time == pytest.approx(0.51)
    assert report.leading_losp.machine_id == 38
    assert [e.machine_id for e in report.lagging_losps] == [36]
    assert report.leading_losp_available
    assert report.exit_code == 1


def test_timeline_tracks_the_verdict():
    events = {
        1: _event(1, "DSP", 0.3),
        2: _event(2, "DLP", 0.5),
        3: _event(3, "DSP", 0.4),
    }
    report = assess(events, (1, 2, 3))
    assert [(e.order, e.machine_id, e.verdict_so_far) for e in report.timeline] == [
        (1, 1, PENDING),
        (2, 3, PENDING),
        (3, 2, "unstable"),
    ]


def test_all_stationary_is_stable_and_cdsp_is_critical():
    stable = assess({1: _event(1, "DSP", 0.3), 2: _event(2, "DSP", 0.35)}, (1, 2))
    assert stable.verdict is Verdict.STABLE
    assert stable.verdict_time == pytest.approx(0.35)
    assert stable.timeline[-1].verdict_so_far == "stable"

    critical = assess({1: _event(1, "CDSP", 0.3), 2: _event(2, "DSP", 0.35)}, (1, 2))
    assert critical.verdict is Verdict.CRITICAL_STABLE
    assert critical.exit_code == 3


def test_cdsp_off_the_extreme_machine_stays_stable():
    # machine 1 leads the score order
    trailing = assess({1: _event(1, "DSP", 0.3), 2: _event(2, "CDSP", 0.35)}, (1, 2))
    assert trailing.verdict is Verdict.STABLE
    assert trailing.timeline[-1].verdict_so_far == "stable"

    both = assess({1: _event(1, "CDSP", 0.3), 2: _event(2, "CDSP", 0.35)}, (1, 2))
    assert both.verdict is Verdict.STABLE


def test_missing_event_is_undecided():
    report = assess({1: _event(1, "DSP", 0.3), 2: None}, (1, 2))
    assert report.verdict is Verdict.UNDECIDED
    assert report.verdict_time is None
    assert report.exit_code == 2


def test_missing_event_does_not_hide_a_liberation():
    report = assess({1: _event(1, "DLP", 0.3), 2: None}, (1, 2))
    assert report.verdict is Verdict.UNSTABLE


def test_no_critical_machines_is_stable():
    report = assess({}, ())
    assert report.verdict is Verdict.STABLE
    assert report.timeline == ()


def test_subset_cannot_confirm_stability():
    events = {1: _event(1, "DSP", 0.3), 2: _event(2, "DLP", 0.5)}
    report = assess_subset(events, (1, 2), (1,))
    assert report.verdict is Verdict.UNDECIDED
    assert report.timeline[-1].verdict_so_far == "undecided"


def test_subset_with_lagging_liberation():
    events = {
        1: _event(1, "DLP", 0.4),
        2: _event(2, "DLP", 0.5),
        3: _event(3, "DSP", 0.3),
    }
    report = assess_subset(events, (1, 2, 3), (2, 3))
    assert report.verdict is Verdict.UNSTABLE
    assert report.leading_losp.machine_id == 2
    assert not report.leading_losp_available
    assert report.verdict_time == pytest.approx(0.5)


def test_full_subset_matches_assess():
    events = {1: _event(1, "DSP", 0.3), 2: _event(2, "CDSP", 0.5)}
    subset = assess_subset(events, (1, 2), (2, 1))
    assert subset.verdict is assess(events, (1, 2)).verdict


def test_subset_errors():
    events = {1: _event(1, "DSP", 0.3)}
    with pytest.raises(AssessmentError, match="must not be empty"):
        assess_subset(events, (1,), ())
    with pytest.raises(AssessmentError, match="are not critical"):
        assess_subset(events, (1,), (5,))


def test_omib_clearing_verdicts(omib_case, omib_network):
    stable = assess_clearing(omib_case, omib_network, 0.1, SETTINGS)
    assert stable.report.verdict is Verdict.STABLE
    assert stable.oracle is Verdict.STABLE
    unstable = assess_clearing(omib_case, omib_network, 0.25, SETTINGS)
    assert unstable.report.verdict is Verdict.UNSTABLE
    assert unstable.oracle is Verdict.UNSTABLE
    assert unstable.report.audit[0].machine_id == 1
    assert unstable.report.audit[0].closed is None
    assert stable.report.audit[0].closed is True


def test_undecided_verdict_extends_the_horizon(omib_case, omib_network):
    short = AnalysisSettings(step=1e-3, t_end=0.16, horizon_extensions=2)
    outcome = assess_clearing(omib_case, omib_network, 0.1, short)
    assert outcome.extensions >= 1
    assert outcome.report.verdict is Verdict.STABLE
    no_retry = assess_clearing(omib_case, omib_network, 0.1, short, extend=False)
    assert no_retry.report.verdict is Verdict.UNDECIDED


def test_omib_cct_brackets_the_closed_form(omib_case, omib_network):
    expected = omib_critical_clearing_time(omib_network, omib_case)
    assert 0.15 < expected < 0.18
    # near-critical swings outlast one second
    settings = AnalysisSettings(step=1e-3, t_end=2.0, horizon_extensions=1)
    result = cct_bisect(omib_case, 1, 0.1, 0.25, 1e-3, settings)
    assert result.width <= 1e-3 + 1e-12
    assert result.t_stable - 2e-3 <= expected <= result.t_unstable + 2e-3
    assert result.fault_bus == 1
    assert len(result.probes) == len({p.t_cl for p in result.probes})


def test_cct_probes_each_time_once():
    calls = []

    def predicate(t_cl):
        calls.append(t_cl)
        return Verdict.STABLE if t_cl < 0.137 else Verdict.UNSTABLE

    result = cct_bisect(None, 1, 0.1, 0.2, 1e-3, SETTINGS, predicate=predicate)
    assert result.t_stable == pytest.approx(0.136)
    assert result.t_unstable == pytest.approx(0.137)
    assert len(calls) == len(set(calls))


def test_cct_counts_undecided_as_unstable():
    def predicate(t_cl):
        return Verdict.CRITICAL_STABLE if t_cl <= 0.15 else Verdict.UNDECIDED

    result = cct_bisect(None, 1, 0.1, 0.2, 1e-3, SETTINGS, predicate=predicate)
    assert result.t_stable == pytest.approx(0.15)


def test_cct_bracket_errors():
    def always_stable(t_cl):
        return Verdict.STABLE

    with pytest.raises(AssessmentError, match="inverted bracket"):
        cct_bisect(None, 1, 0.2, 0.1, 1e-3, SETTINGS, predicate=always_stable)
    with pytest.raises(AssessmentError, match="finer than the step"):
        cct_bisect(None, 1, 0.1, 0.2, 1e-4, SETTINGS, predicate=always_stable)
    with pytest.raises(BracketError, match="not bracketed"):
        cct_bisect(None, 1, 0.1, 0.2, 1e-3, SETTINGS, predicate=always_stable)


def test_theta_oracle_threshold(omib_case, omib_network):
    outcome = assess_clearing(omib_case, omib_network, 0.25, SETTINGS)
    assert theta_oracle(outcome.trajectory) is Verdict.UNSTABLE
    assert theta_oracle(outcome.trajectory, threshold=1e6) is Verdict.STABLE
    assert theta_oracle(outcome.trajectory, threshold=2.0 * math.pi) is outcome.oracle
