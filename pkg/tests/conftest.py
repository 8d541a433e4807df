import pytest
from hypothesis import settings

import acceptance_log

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def profiles():
    from apsmon.glucose import load_profiles

    return load_profiles()


SMALL_CAMPAIGN = {"patients": ["patientA", "patientD"], "sample": 8, "seed": 2}


@pytest.fixture(scope="session")
def small_traces(profiles):
    """A two-patient campaign; patientD's high basal makes hazards common."""
    from apsmon.faults import CampaignSpec
    from apsmon.simulation import run_campaign, scenarios_from_campaign

    spec = CampaignSpec.from_dict(dict(SMALL_CAMPAIGN))
    return run_campaign(scenarios_from_campaign(spec), profiles).traces
