import logging

import pytest


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="crossflow")
