from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from talklearn.config import AppConfig, default_lexicon
from talklearn.engine import SimulationConfig, simulate
from talklearn.service import create_app
from talklearn.telemetry import parse_log, serialize_log
from talklearn.trace import trace_to_dict
from talklearn.tracegen import generate_trace

from helpers import run_scripted_session


@pytest.fixture()
def client(tmp_path):
    cfg = AppConfig(clock="virtual", sim=SimulationConfig(seed=0), logs_dir=str(tmp_path))
    return TestClient(create_app(cfg))


def _simulate_request(seed=5, n=8):
    return {"trace": trace_to_dict(generate_trace(seed, n)), "seed": seed}


class TestRest:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"

    def test_simulate_matches_library(self, client, lexicon):
        trace = generate_trace(5, 8)
        expected = serialize_log(simulate(trace, SimulationConfig(seed=5), lexicon)).decode()
        response = client.post("/simulate", json=_simulate_request(5, 8))
        assert response.status_code == 200
        body = response.json()
        assert body["jsonl"] == expected
        assert body["events"] == len(expected.splitlines())

    def test_simulate_rejects_bad_trace(self, client):
        payload = _simulate_request()
        payload["trace"]["utterances"][0]["speaker"] = "mallory"
        response = client.post("/simulate", json=payload)
        assert response.status_code == 422
        assert "mallory" in response.json()["detail"]

    def test_report_round_trip(self, client):
        jsonl = client.post("/simulate", json=_simulate_request()).json()["jsonl"]
        response = client.post("/report", json={"jsonl": jsonl})
        assert response.status_code == 200
        body = response.json()
        assert set(body["metrics"]) == {"alice", "bob"}
        assert body["violations"] == []
        assert "alice" in body["text"]
        for metrics in body["metrics"].values():
            assert 0.0 <= metrics["untranslated_pct"] <= 100.0

    def test_report_names_corrupt_line(self, client):
        jsonl = client.post("/simulate", json=_simulate_request()).json()["jsonl"]
        lines = jsonl.splitlines()
        lines[2] = "{broken"
        response = client.post("/report", json={"jsonl": "\n".join(lines)})
        assert response.status_code == 422
        assert "line 3" in response.json()["detail"]

    def test_quiz_build_and_score(self, client):
        jsonl = client.post("/simulate", json=_simulate_request(6, 14)).json()["jsonl"]
        build = client.post(
            "/quiz/build",
            json={"jsonl": jsonl, "n_items": 4, "seed": 3, "participant": "alice"},
        )
        assert build.status_code == 200
        test = build.json()
        assert [i["kind"] for i in test["items"]] == [
            "Retell", "Recognize", "Retell", "Recognize",
        ]
        answers = [i["expected"] for i in test["items"]]
        score = client.post(
            "/quiz/score",
            json={"test": test, "answers": answers, "participant": "alice"},
        )
        assert score.status_code == 200
        result = score.json()
        assert result["n_retold"] == 2
        assert result["n_recognized"] == 2

    def test_quiz_build_deterministic(self, client):
        jsonl = client.post("/simulate", json=_simulate_request(6, 14)).json()["jsonl"]
        request = {"jsonl": jsonl, "n_items": 4, "seed": 9}
        first = client.post("/quiz/build", json=request).json()
        second = client.post("/quiz/build", json=request).json()
        assert first == second

    def test_quiz_insufficient_material(self, client):
        jsonl = client.post("/simulate", json=_simulate_request(5, 2)).json()["jsonl"]
        response = client.post("/quiz/build", json={"jsonl": jsonl, "n_items": 40, "seed": 1})
        assert response.status_code == 422

    def test_questionnaire_requires_open_session(self, client):
        response = client.post(
            "/sessions/ghost/questionnaire",
            json={"participant": "alice", "answers": [{"question_id": "q1", "likert": 4}]},
        )
        assert response.status_code == 404

    def test_questionnaire_rejects_bad_likert(self, client):
        response = client.post(
            "/sessions/ghost/questionnaire",
            json={"participant": "alice", "answers": [{"question_id": "q1", "likert": 6}]},
        )
        assert response.status_code == 422


class TestWireProtocol:
    def test_scripted_clients_reproduce_simulation(self, tmp_path, lexicon):
        trace = generate_trace(44, 10)
        sim_cfg = SimulationConfig(seed=44)
        expected = serialize_log(simulate(trace, sim_cfg, lexicon))
        run_scripted_session(trace, SimulationConfig(seed=44), str(tmp_path))
        with open(tmp_path / f"{trace.session_id}.jsonl", "rb") as fh:
            assert fh.read() == expected

    def test_sample_trace_with_explicit_end_reproduced(self, tmp_path, lexicon):
        # The shipped story traces pin an explicit session end; the join
        # handshake must carry it for the served log to match.
        from talklearn.config import load_sample_trace
        from talklearn.trace import trace_from_dict

        trace = trace_from_dict(load_sample_trace("story_market.json"))
        sim_cfg = SimulationConfig(seed=7)
        expected = serialize_log(simulate(trace, sim_cfg, lexicon))
        run_scripted_session(trace, SimulationConfig(seed=7), str(tmp_path))
        with open(tmp_path / f"{trace.session_id}.jsonl", "rb") as fh:
            assert fh.read() == expected

    def test_no_raw_media_on_the_wire(self, tmp_path):
        trace = generate_trace(45, 8)
        inbox = run_scripted_session(trace, SimulationConfig(seed=45), str(tmp_path))
        total = 0
        for messages in inbox.values():
            for message in messages:
                total += 1
                assert "media://" not in json.dumps(message)
        assert total > 0

    def test_third_join_rejected(self, tmp_path):
        cfg = AppConfig(clock="virtual", sim=SimulationConfig(seed=1), logs_dir=str(tmp_path))

        def join(ws, pid, native, foreign):
            ws.send_json({
                "type": "Join", "session_id": "full",
                "payload": {"participant": {
                    "id": pid, "native_language": native, "foreign_language": foreign,
                }},
            })
            return ws.receive_json()

        with TestClient(create_app(cfg)) as client, \
                client.websocket_connect("/ws") as a, client.websocket_connect("/ws") as b:
            assert join(a, "alice", "en", "fr")["type"] == "Join"
            assert join(b, "bob", "fr", "en")["type"] == "Join"
            with client.websocket_connect("/ws") as c:
                response = join(c, "carol", "en", "fr")
                assert response["type"] == "Error"
                assert "full" in response["payload"]["message"]

    def test_message_before_join_rejected(self, tmp_path):
        cfg = AppConfig(clock="virtual", sim=SimulationConfig(seed=1), logs_dir=str(tmp_path))
        with TestClient(create_app(cfg)) as client, client.websocket_connect("/ws") as ws:
            ws.send_json({"type": "UtteranceStart", "session_id": "s", "payload": {}})
            response = ws.receive_json()
            assert response["type"] == "Error"
            assert response["payload"]["code"] == "join_required"

    def test_disconnect_mid_session_leaves_valid_log(self, tmp_path):
        cfg = AppConfig(clock="virtual", sim=SimulationConfig(seed=2), logs_dir=str(tmp_path))

        with TestClient(create_app(cfg)) as client, \
                client.websocket_connect("/ws") as a, client.websocket_connect("/ws") as b:
            for ws, pid, nat, forn in ((a, "alice", "en", "fr"), (b, "bob", "fr", "en")):
                ws.send_json({
                    "type": "Join", "session_id": "partial",
                    "payload": {"participant": {
                        "id": pid, "native_language": nat, "foreign_language": forn,
                    }},
                })
            while not (a.receive_json()["payload"].get("started")):
                pass
            a.send_json({
                "type": "UtteranceStart", "session_id": "partial", "t": 0,
                "payload": {"utterance_id": "u1"},
            })
            a.send_json({
                "type": "UtteranceEnd", "session_id": "partial", "t": 1200,
                "payload": {"utterance_id": "u1", "text": "hello world"},
            })
            # Wait for the receipts so both messages are applied, then leave
            # without waiting for the translation to present.
            acks = 0
            while acks < 2:
                message = a.receive_json()
                if message["type"] == "StageUpdate" and message["payload"].get("ack"):
                    acks += 1
        log_path = tmp_path / "partial.jsonl"
        with open(log_path, "rb") as fh:
            log = parse_log(fh.read())
        assert log.closed
        kinds = {e.kind for e in log.events}
        assert "OriginalMedia" in kinds

    def test_mismatched_languages_rejected_at_second_join(self, tmp_path):
        cfg = AppConfig(clock="virtual", sim=SimulationConfig(seed=1), logs_dir=str(tmp_path))
        with TestClient(create_app(cfg)) as client, client.websocket_connect("/ws") as a:
            a.send_json({
                "type": "Join", "session_id": "bad",
                "payload": {"participant": {
                    "id": "alice", "native_language": "en", "foreign_language": "fr",
                }},
            })
            assert a.receive_json()["type"] == "Join"
            with client.websocket_connect("/ws") as b:
                b.send_json({
                    "type": "Join", "session_id": "bad",
                    "payload": {"participant": {
                        "id": "bob", "native_language": "en", "foreign_language": "fr",
                    }},
                })
                response = b.receive_json()
                assert response["type"] == "Error"
                assert "complementary" in response["payload"]["message"]
