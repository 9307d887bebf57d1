"""External-evaluator wire protocol over child-process standard streams.

One JSON message per line in both directions. The parent sends an
``evaluate`` request and blocks (with a timeout) for the response carrying
the same id; any trainer in any language can implement the child side with
a read-line/write-line loop. Unknown fields are ignored for forward
compatibility and lines are length-bounded. A hung, crashed, or babbling
child fails only the pending request; the child is restarted with bounded
backoff and the search goes on.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import sys
import threading
import time
from typing import Optional

from .evaluator import EvalResult, EvaluatorFailure
from .genotype import Genotype, ParseError, decode, encode
from .proxy import ReducedSetting, ReductionTable, SettingError, format_label, parse_label

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_LINE_BYTES = 1 << 20


def evaluate_request(
    request_id: int,
    genotype: Genotype,
    setting: ReducedSetting,
    start_epoch: int,
    end_epoch: int,
    resume_token: Optional[str],
) -> str:
    return json.dumps(
        {
            "schema_version": SCHEMA_VERSION,
            "id": request_id,
            "op": "evaluate",
            "genotype": encode(genotype),
            "setting": format_label(setting),
            "start_epoch": start_epoch,
            "end_epoch": end_epoch,
            "resume_token": resume_token,
        },
        sort_keys=True,
    )


class ExternalEvaluator:
    """Evaluator backed by a long-lived child process speaking the protocol."""

    def __init__(
        self,
        command,
        timeout: float = 60.0,
        restart_backoff: float = 0.2,
        max_backoff: float = 2.0,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.restart_backoff = restart_backoff
        self.max_backoff = max_backoff
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue" = queue.Queue()
        self._next_id = 1
        self._consecutive_failures = 0
        self._lock = threading.Lock()

    # -- child management ---------------------------------------------------

    def _reader(self, proc, out_queue):
        for raw in proc.stdout:
            out_queue.put(raw)
        out_queue.put(None)  # EOF sentinel

    def _ensure_child(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        if self._consecutive_failures:
            delay = min(
                self.restart_backoff * (2 ** (self._consecutive_failures - 1)),
                self.max_backoff,
            )
            time.sleep(delay)
        self._lines = queue.Queue()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        threading.Thread(
            target=self._reader, args=(self._proc, self._lines), daemon=True
        ).start()
        logger.info("spawned evaluator child: %s", " ".join(self.command))

    def _kill_child(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.kill()
            self._proc.wait(timeout=5)
        except Exception:
            pass
        self._proc = None

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                    self._proc.wait(timeout=2)
                except Exception:
                    self._kill_child()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- protocol -------------------------------------------------------------

    def _fail(self, message: str) -> EvaluatorFailure:
        self._kill_child()
        self._consecutive_failures += 1
        return EvaluatorFailure(message)

    def _request(self, line: str, request_id: int) -> dict:
        self._ensure_child()
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._fail("evaluator child unwritable: %s" % exc) from None
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise self._fail("evaluator child timed out after %.1fs" % self.timeout)
            try:
                raw = self._lines.get(timeout=remaining)
            except queue.Empty:
                raise self._fail(
                    "evaluator child timed out after %.1fs" % self.timeout
                ) from None
            if raw is None:
                raise self._fail("evaluator child exited mid-request")
            if len(raw) > MAX_LINE_BYTES:
                raise self._fail("evaluator child sent an oversized line")
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError:
                raise self._fail(
                    "evaluator child sent a malformed line: %r" % raw[:120]
                ) from None
            if not isinstance(obj, dict) or obj.get("id") != request_id:
                raise self._fail(
                    "evaluator child answered with mismatched id %r" % (obj.get("id"),)
                )
            return obj

    def ping(self) -> bool:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            line = json.dumps(
                {"schema_version": SCHEMA_VERSION, "id": request_id, "op": "ping"},
                sort_keys=True,
            )
            obj = self._request(line, request_id)
            self._consecutive_failures = 0
            return obj.get("status") == "ok"

    def evaluate(
        self,
        genotype: Genotype,
        setting: ReducedSetting,
        start_epoch: int,
        end_epoch: int,
        resume_token: Optional[str] = None,
    ) -> EvalResult:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            line = evaluate_request(
                request_id, genotype, setting, start_epoch, end_epoch, resume_token
            )
            obj = self._request(line, request_id)
            if obj.get("status") != "ok":
                # A clean protocol-level error: the child survives.
                self._consecutive_failures = 0
                raise EvaluatorFailure(
                    "evaluator reported failure: %s" % obj.get("error", "unknown error")
                )
            try:
                accuracy = float(obj["accuracy"])
                train = obj.get("train_accuracy")
                train_accuracy = float(train) if train is not None else None
                token = str(obj["resume_token"])
            except (KeyError, TypeError, ValueError):
                raise self._fail("evaluator response missing fields: %r" % obj) from None
            self._consecutive_failures = 0
            return EvalResult(accuracy, train_accuracy, token)


# -- child side ---------------------------------------------------------------


def _error_response(request_id, message: str) -> str:
    return json.dumps(
        {
            "schema_version": SCHEMA_VERSION,
            "id": request_id,
            "status": "error",
            "error": message,
        },
        sort_keys=True,
    )


def serve(evaluator, table: ReductionTable, fin=None, fout=None) -> None:
    """Serve any in-process evaluator over the wire protocol until EOF.

    Used to expose the surrogate as a subprocess; a real trainer can reuse
    this loop by implementing the evaluator contract.
    """
    fin = fin if fin is not None else sys.stdin
    fout = fout if fout is not None else sys.stdout
    for raw in fin:
        if not raw.strip():
            continue
        request_id = None
        try:
            if len(raw) > MAX_LINE_BYTES:
                raise ValueError("request line exceeds %d bytes" % MAX_LINE_BYTES)
            obj = json.loads(raw)
            if not isinstance(obj, dict):
                raise ValueError("request must be a JSON object")
            request_id = obj.get("id")
            op = obj.get("op")
            if op == "ping":
                response = json.dumps(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "id": request_id,
                        "status": "ok",
                        "pong": True,
                    },
                    sort_keys=True,
                )
            elif op == "shutdown":
                fout.write(
                    json.dumps(
                        {
                            "schema_version": SCHEMA_VERSION,
                            "id": request_id,
                            "status": "ok",
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                fout.flush()
                return
            elif op == "evaluate":
                genotype = decode(str(obj["genotype"]))
                setting = parse_label(str(obj["setting"]), table)
                result = evaluator.evaluate(
                    genotype,
                    setting,
                    int(obj["start_epoch"]),
                    int(obj["end_epoch"]),
                    obj.get("resume_token"),
                )
                response = json.dumps(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "id": request_id,
                        "status": "ok",
                        "accuracy": result.accuracy,
                        "train_accuracy": result.train_accuracy,
                        "resume_token": result.resume_token,
                    },
                    sort_keys=True,
                )
            else:
                raise ValueError("unknown op %r" % op)
        except (
            ValueError,
            KeyError,
            TypeError,
            ParseError,
            SettingError,
            EvaluatorFailure,
        ) as exc:
            response = _error_response(request_id, str(exc))
        try:
            fout.write(response + "\n")
            fout.flush()
        except BrokenPipeError:
            return
