import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))  # make tests/oracle.py importable

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def data_dir():
    return DATA_DIR
