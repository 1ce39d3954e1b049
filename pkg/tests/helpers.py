"""Shared test machinery: scripted wire clients and independent oracles."""

from __future__ import annotations

from fastapi.testclient import TestClient

from talklearn.config import AppConfig
from talklearn.core import RANK_CAPTURE_END, RANK_CAPTURE_START
from talklearn.engine import SimulationConfig, trace_utterances
from talklearn.service import create_app
from talklearn.trace import Trace


def run_scripted_session(
    trace: Trace,
    sim_config: SimulationConfig,
    logs_dir: str,
    close_first: str | None = None,
) -> dict[str, list[dict]]:
    """Replay a trace through two scripted websocket clients against a
    virtual-clocked service. Returns every message each client received;
    the session log lands in logs_dir/<session_id>.jsonl.
    """
    cfg = AppConfig(clock="virtual", sim=sim_config, logs_dir=logs_dir)
    app = create_app(cfg)

    events = []
    for utt in trace_utterances(trace, sim_config):
        events.append((utt.capture_start, RANK_CAPTURE_START, utt.speaker, utt.id, "start", utt))
        events.append((utt.capture_end, RANK_CAPTURE_END, utt.speaker, utt.id, "end", utt))
    events.sort(key=lambda e: e[:4])

    sid = trace.session_id
    first, second = trace.participants
    inbox: dict[str, list[dict]] = {first.id: [], second.id: []}

    def wait_for(ws, who: str, predicate, limit: int = 2000) -> dict:
        for _ in range(limit):
            message = ws.receive_json()
            inbox[who].append(message)
            if predicate(message):
                return message
        raise AssertionError(f"{who}: expected message never arrived")

    def join_payload(participant) -> dict:
        payload: dict = {
            "participant": {
                "id": participant.id,
                "native_language": participant.native_language,
                "foreign_language": participant.foreign_language,
            }
        }
        if trace.session_end_ms is not None:
            payload["session_end_ms"] = trace.session_end_ms
        return {"type": "Join", "session_id": sid, "payload": payload}

    # The client context shares one event loop across both connections, the
    # same single-loop setup a real server gives the session owner.
    with TestClient(app) as client, client.websocket_connect("/ws") as ws_a, \
            client.websocket_connect("/ws") as ws_b:
        sockets = {first.id: ws_a, second.id: ws_b}
        ws_a.send_json(join_payload(first))
        wait_for(ws_a, first.id, lambda m: m["type"] == "Join")
        ws_b.send_json(join_payload(second))
        wait_for(ws_b, second.id, lambda m: m["type"] == "Join" and m["payload"]["started"])
        wait_for(ws_a, first.id, lambda m: m["type"] == "Join" and m["payload"]["started"])

        for t, rank, speaker, uid, kind, utt in events:
            ws = sockets[speaker]
            if kind == "start":
                ws.send_json({
                    "type": "UtteranceStart",
                    "session_id": sid,
                    "t": t,
                    "payload": {"utterance_id": uid},
                })
                ack = ("UtteranceStart", uid)
            else:
                ws.send_json({
                    "type": "UtteranceEnd",
                    "session_id": sid,
                    "t": t,
                    "payload": {
                        "utterance_id": uid,
                        "text": utt.text,
                        "translate_requested": utt.translate_requested,
                        "practice": utt.practice,
                        "language": utt.language,
                    },
                })
                ack = ("UtteranceEnd", uid)
            wait_for(
                ws,
                speaker,
                lambda m, ack=ack: (
                    m["type"] == "StageUpdate"
                    and m["payload"].get("ack") == ack[0]
                    and m["payload"].get("ack_id") == ack[1]
                ),
            )

        # First disconnect closes the session; the surviving client drains
        # its queue (metrics snapshot included) until the server hangs up.
        closer = close_first or first.id
        survivor = second.id if closer == first.id else first.id
        sockets[closer].close()
        try:
            while True:
                inbox[survivor].append(sockets[survivor].receive_json())
        except Exception:
            pass
    return inbox


# ---------------------------------------------------------------------------
# independent oracles


def levenshtein_matrix(a: str, b: str) -> int:
    """Full dynamic-programming table, kept deliberately naive."""
    rows, cols = len(a) + 1, len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + cost,
            )
    return table[rows - 1][cols - 1]


def vad_oracle(
    energies: list[float],
    threshold: float,
    min_frames: int,
    hangover: int,
    period: int,
) -> list[tuple[int, int]]:
    """Mark qualifying frames, paint hangover extensions, read off maximal
    painted runs, then trim each run back to its last qualifying frame."""
    n = len(energies)
    qualifying = [False] * n
    i = 0
    while i < n:
        if energies[i] >= threshold:
            j = i
            while j < n and energies[j] >= threshold:
                j += 1
            if j - i >= min_frames:
                for k in range(i, j):
                    qualifying[k] = True
            i = j
        else:
            i += 1
    painted = [False] * (n + hangover + 1)
    i = 0
    while i < n:
        if qualifying[i]:
            j = i
            while j < n and qualifying[j]:
                j += 1
            for k in range(i, j + hangover):
                painted[k] = True
            i = j
        else:
            i += 1
    intervals = []
    i = 0
    while i < len(painted):
        if painted[i]:
            j = i
            while j < len(painted) and painted[j]:
                j += 1
            last_active = max(k for k in range(i, min(j, n)) if qualifying[k])
            intervals.append((i * period, (last_active + 1) * period))
            i = j
        else:
            i += 1
    return intervals


def recount_metrics(lines: list[dict], participant: str) -> tuple[float, float]:
    """Naive percentage recount straight off parsed JSONL dicts."""
    sent = 0
    untranslated = 0
    machine = set()
    for record in lines:
        if record["kind"] == "OriginalMedia" and record["participant"] == participant:
            if record["payload"].get("practice"):
                continue
            sent += 1
            if not record["payload"].get("translate_requested", True):
                untranslated += 1
        if (
            record["kind"] == "TranslatedText"
            and record["participant"] == participant
            and record["payload"].get("source") == "Machine"
        ):
            machine.add(record["utt"])
    if sent == 0:
        return 0.0, 0.0
    return round(100.0 * untranslated / sent, 1), round(100.0 * len(machine) / sent, 1)
