import pytest

from leoaudit import sim

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def plan_hop():
    """The bundled 24 h plan-hopping trace, simulated once per session."""
    return sim.simulate(sim.plan_hop_scenario())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def audit_inputs(out):
    """AuditInputs straight from simulator records, skipping the file round trip."""
    from leoaudit.pipeline import AuditInputs

    return AuditInputs(telemetry=out.telemetry, pings=out.pings, tests=out.tests,
                       iface=out.iface, portal=out.portal)
