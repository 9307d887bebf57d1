import io
import json
import sys
import textwrap
import time

import pytest

from econas.bridge import ExternalEvaluator, serve
from econas.evaluator import EvaluatorFailure
from econas.genotype import NetworkConfig, OutputRule, SEARCH8, random_genotype
from econas.harness import bridge_selftest, default_serve_command
from econas.proxy import CIFAR10_TABLE, ReducedSetting, format_label
from econas.seeding import derive_rng
from econas.surrogate import SurrogateEvaluator, SurrogateParams


def _genotype(seed=0):
    return random_genotype(
        derive_rng("bridge", seed), NetworkConfig(node_count=2), SEARCH8,
        OutputRule.UNUSED_ONLY,
    )


SETTING = ReducedSetting(4, 4, 0, 10)


# -- serve() protocol, in process ------------------------------------------------


def _serve_lines(requests):
    fin = io.StringIO("".join(json.dumps(r) + "\n" for r in requests))
    fout = io.StringIO()
    serve(SurrogateEvaluator(SurrogateParams(), CIFAR10_TABLE), CIFAR10_TABLE, fin, fout)
    return [json.loads(line) for line in fout.getvalue().splitlines()]


def test_serve_ping_and_evaluate_with_unknown_fields():
    g = _genotype()
    from econas.genotype import encode

    responses = _serve_lines(
        [
            {"id": 1, "op": "ping", "some_future_field": 42},
            {
                "id": 2,
                "op": "evaluate",
                "genotype": encode(g),
                "setting": format_label(SETTING),
                "start_epoch": 0,
                "end_epoch": 10,
                "resume_token": None,
                "extra": {"ignored": True},
            },
        ]
    )
    assert responses[0]["status"] == "ok" and responses[0]["id"] == 1
    assert responses[1]["status"] == "ok"
    local = SurrogateEvaluator(SurrogateParams(), CIFAR10_TABLE)
    expected = local.evaluate(g, SETTING, 0, 10)
    assert responses[1]["accuracy"] == expected.accuracy
    assert responses[1]["resume_token"] == expected.resume_token


def test_serve_error_responses_do_not_kill_loop():
    responses = _serve_lines(
        [
            {"id": 1, "op": "nonsense"},
            {"id": 2, "op": "evaluate", "genotype": "not a doc", "setting": "c0r0s0e10",
             "start_epoch": 0, "end_epoch": 10},
            {"id": 3, "op": "ping"},
        ]
    )
    assert responses[0]["status"] == "error"
    assert responses[1]["status"] == "error"
    assert responses[2]["status"] == "ok"


def test_serve_malformed_line_reports_error():
    fin = io.StringIO("this is not json\n" + json.dumps({"id": 2, "op": "ping"}) + "\n")
    fout = io.StringIO()
    serve(SurrogateEvaluator(SurrogateParams(), CIFAR10_TABLE), CIFAR10_TABLE, fin, fout)
    responses = [json.loads(line) for line in fout.getvalue().splitlines()]
    assert responses[0]["status"] == "error"
    assert responses[1]["status"] == "ok"


def test_serve_shutdown():
    responses = _serve_lines([{"id": 1, "op": "shutdown"}, {"id": 2, "op": "ping"}])
    assert len(responses) == 1  # loop exits after shutdown


# -- subprocess path ---------------------------------------------------------------


def test_bridge_selftest_roundtrip():
    lines = bridge_selftest(seed=7, checks=2)
    assert lines[-1].startswith("bridge-selftest: all 2 checks passed")


def test_external_evaluator_matches_in_process():
    local = SurrogateEvaluator(SurrogateParams().with_seed(7), CIFAR10_TABLE)
    with ExternalEvaluator(default_serve_command("cifar10", 7), timeout=30) as remote:
        for seed in range(3):
            g = _genotype(seed)
            mine = local.evaluate(g, SETTING, 0, 10)
            theirs = remote.evaluate(g, SETTING, 0, 10)
            assert mine == theirs


STUB = textwrap.dedent(
    """
    import json, sys, time

    from econas.genotype import decode
    from econas.proxy import CIFAR10_TABLE, parse_label
    from econas.surrogate import SurrogateEvaluator, SurrogateParams

    mode = sys.argv[1]
    ev = SurrogateEvaluator(SurrogateParams().with_seed(7), CIFAR10_TABLE)
    for line in sys.stdin:
        obj = json.loads(line)
        if obj.get("op") == "ping":
            print(json.dumps({"id": obj["id"], "status": "ok"}), flush=True)
            continue
        if obj.get("end_epoch") == 13:  # fault marker
            if mode == "garbage":
                print("%% this is not json %%", flush=True)
                continue
            if mode == "sleep":
                time.sleep(10)
            if mode == "exit":
                sys.exit(3)
        g = decode(obj["genotype"])
        s = parse_label(obj["setting"], CIFAR10_TABLE)
        r = ev.evaluate(g, s, obj["start_epoch"], obj["end_epoch"], obj.get("resume_token"))
        print(
            json.dumps(
                {
                    "id": obj["id"],
                    "status": "ok",
                    "accuracy": r.accuracy,
                    "train_accuracy": r.train_accuracy,
                    "resume_token": r.resume_token,
                }
            ),
            flush=True,
        )
    """
)


def _stub_command(tmp_path, mode):
    path = tmp_path / "stub_evaluator.py"
    path.write_text(STUB)
    return [sys.executable, str(path), mode]


@pytest.mark.parametrize("mode", ["garbage", "exit"])
def test_misbehaving_child_fails_single_request_then_recovers(tmp_path, mode):
    g = _genotype(1)
    with ExternalEvaluator(_stub_command(tmp_path, mode), timeout=20, restart_backoff=0.05) as ev:
        ok = ev.evaluate(g, SETTING, 0, 10)
        with pytest.raises(EvaluatorFailure):
            ev.evaluate(g, SETTING.with_epochs(13), 0, 13)
        again = ev.evaluate(g, SETTING, 0, 10)  # served by a restarted child
        assert again == ok


def test_hung_child_times_out_and_restarts(tmp_path):
    g = _genotype(2)
    with ExternalEvaluator(
        _stub_command(tmp_path, "sleep"), timeout=1.0, restart_backoff=0.05
    ) as ev:
        ok = ev.evaluate(g, SETTING, 0, 10)
        start = time.monotonic()
        with pytest.raises(EvaluatorFailure, match="timed out"):
            ev.evaluate(g, SETTING.with_epochs(13), 0, 13)
        assert time.monotonic() - start < 5.0
        assert ev.evaluate(g, SETTING, 0, 10) == ok
