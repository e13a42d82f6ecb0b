import os
import sys

# Repo root on the path so `import config` works from the tests
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or end-to-end checks")
