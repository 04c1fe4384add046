from __future__ import annotations

import pytest

from ckn.graph import GraphStore
from ckn.ingest import CampaignSpec, RunLog, ingest_spec, sweep_id


@pytest.fixture
def store():
    return GraphStore()


def grid_spec(name="camp-1", F=("0.01", "0.02"), k=("0.05",), extra_group=False) -> CampaignSpec:
    data = {
        "campaign": name,
        "owner": "alice",
        "sweep_groups": [
            {
                "name": "fk",
                "researcher": "bob",
                "parameters": {"L": [64], "Du": [0.2], "Dv": [0.1], "F": list(F), "k": list(k)},
            }
        ],
    }
    if extra_group:
        data["sweep_groups"].append(
            {"name": "dv", "researcher": "carol", "parameters": {"Dv": ["0.05", "0.1", "0.15"]}}
        )
    return CampaignSpec.from_dict(data)


def make_log(spec: CampaignSpec, group: str, params: dict[str, str], instance: str, **kw) -> RunLog:
    return RunLog(
        instance_id=instance,
        sweep_id=sweep_id(spec.name, group, params),
        start=kw.pop("start", 1000),
        end=kw.pop("end", 1010),
        exit_code=kw.pop("exit_code", 0),
        params=kw.pop("log_params", dict(params)),
        inputs=kw.pop("inputs", [f"{instance}.settings"]),
        outputs=kw.pop("outputs", [f"{instance}.hist"]),
        metrics=kw.pop("metrics", {"runtime": 10.0}),
        extra=kw.pop("extra", {"name": "grayscott"}),
    )


@pytest.fixture
def campaign(store):
    spec = grid_spec()
    ingest_spec(store, spec)
    return spec


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    results = item.config.stash.setdefault(ACCEPTANCE, {})
    status = "PASS" if rep.passed else "FAIL"
    if number in results and results[number][0] == "FAIL":
        return
    results[number] = (status, title, detail, rep.duration)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail, duration = results[number]
        line = f"criterion {number}: {status}  {title}  ({duration:.2f} s)"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
