"""Latency-instrumented serving loop over newline-delimited JSON requests.

One reader, a bounded queue, one scoring context. A batching window > 0
coalesces requests that arrive together into a single forward pass; because
inference pads every sequence to the fixed context length, a request's
logits are identical whether it is scored alone or inside a batch, so
batching changes throughput, never results. The loop answers malformed
requests with per-request errors and keeps going; shutdown emits the latency
histogram summary.
"""
from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from .prompts import TaskKind, make_prompt, rank_batch
from .stories import story_from_dict
from .vocab import CLASS_ITEM, Vocabulary


@dataclass
class LatencyHistogram:
    samples_us: list[int] = field(default_factory=list)

    def add(self, sample_us: int) -> None:
        self.samples_us.append(sample_us)

    def percentile(self, q: float) -> int:
        """Nearest-rank percentile over the recorded samples."""
        if not self.samples_us:
            raise ValueError("no latency samples recorded")
        ordered = sorted(self.samples_us)
        rank = max(1, math.ceil(q / 100.0 * len(ordered)))
        return ordered[rank - 1]

    def summary(self) -> dict:
        return {
            "n": len(self.samples_us),
            "p50_us": self.percentile(50),
            "p95_us": self.percentile(95),
            "p99_us": self.percentile(99),
        }


def score_request(request: dict, model, vocabulary: Vocabulary) -> dict:
    """One rank request -> response payload (no latency fields). Raises on a
    malformed request; the batch path converts that into an error response."""
    response = _score_batch([request], model, vocabulary)[0]
    if "error" in response:
        raise ValueError(response["error"])
    return response


def _score_batch(requests: list[dict], model, vocabulary: Vocabulary) -> list[dict]:
    """Score several parsed requests with one forward pass; requests that
    fail prompt construction get error responses without poisoning the batch."""
    prompts = []
    meta = []
    responses: dict[int, dict] = {}
    for i, request in enumerate(requests):
        try:
            story = story_from_dict(request["story"])
            kind = TaskKind(request["task"])
            context = dict(request.get("context", {}))
            events = [e for s in story.sessions for e in s.events]
            now = request.get("now")
            if now is None:
                now = events[-1].timestamp if events else 0
            prompts.append(make_prompt(story, int(now), kind, context,
                                       vocabulary, model.config.context_length))
            meta.append((i, request, kind))
        except Exception as exc:
            responses[i] = {"id": request.get("id"), "error": str(exc)}
    if prompts:
        ranked_lists = rank_batch(prompts, model)
        for (i, request, kind), ranked in zip(meta, ranked_lists):
            top_k = int(request.get("top_k", 10))
            candidates = []
            for token_id, logit in ranked.top(top_k):
                if vocabulary.classes[token_id] == CLASS_ITEM:
                    ext = vocabulary.item_id_of_token[token_id]
                else:
                    ext = vocabulary.carousel_id_of_token.get(token_id, "")
                candidates.append({"id": ext, "token_id": token_id,
                                   "logit": logit})
            responses[i] = {"id": request.get("id"), "task": kind.value,
                            "model_step": model.step, "candidates": candidates}
    return [responses[i] for i in range(len(requests))]


def serve_lines(lines, model, vocabulary: Vocabulary, write,
                batch_window_ms: float = 0.0, max_batch: int = 32,
                clock=time.perf_counter_ns) -> LatencyHistogram:
    """Drive the serve loop from an iterable of request lines (stdio, a
    socket reader, or a test). Returns the latency histogram; its summary is
    also written as a final record."""
    histogram = LatencyHistogram()
    feed = queue.Queue(maxsize=1024)
    done = object()

    def reader():
        for line in lines:
            feed.put(line)
        feed.put(done)

    thread = threading.Thread(target=reader, daemon=True)
    thread.start()

    finished = False
    while not finished:
        item = feed.get()
        if item is done:
            break
        batch_lines = [item]
        if batch_window_ms > 0:
            deadline = time.perf_counter() + batch_window_ms / 1000.0
            while len(batch_lines) < max_batch:
                remaining = deadline - time.perf_counter()
                try:
                    nxt = feed.get(timeout=max(0.0, remaining))
                except queue.Empty:
                    break
                if nxt is done:
                    finished = True
                    break
                batch_lines.append(nxt)
        started = clock()
        responses: dict[int, dict] = {}
        valid: list[tuple[int, dict]] = []
        for i, raw in enumerate(batch_lines):
            raw = raw.strip()
            try:
                if not raw:
                    raise ValueError("empty request line")
                valid.append((i, json.loads(raw)))
            except Exception as exc:
                responses[i] = {"error": f"malformed request: {exc}"}
        if valid:
            for (i, _), response in zip(valid, _score_batch(
                    [r for _, r in valid], model, vocabulary)):
                responses[i] = response
        latency_us = int(max(1, (clock() - started) // 1000))
        for i in range(len(batch_lines)):
            write(json.dumps(dict(responses[i], latency_us=latency_us),
                             sort_keys=True) + "\n")
            histogram.add(latency_us)
    write(json.dumps({"summary": histogram.summary()}, sort_keys=True) + "\n")
    return histogram


def serve_tcp(model, vocabulary: Vocabulary, port: int,
              batch_window_ms: float = 0.0, max_batch: int = 32,
              max_connections: int | None = 1) -> None:
    """Accept local connections one at a time; each connection streams
    newline-delimited requests and receives newline-delimited responses."""
    server = socket.create_server(("127.0.0.1", port))
    served = 0
    try:
        while max_connections is None or served < max_connections:
            conn, _ = server.accept()
            served += 1
            with conn, conn.makefile("r", encoding="utf-8") as reader, \
                    conn.makefile("w", encoding="utf-8") as writer:
                def write(text):
                    writer.write(text)
                    writer.flush()
                serve_lines(reader, model, vocabulary, write,
                            batch_window_ms=batch_window_ms, max_batch=max_batch)
    finally:
        server.close()
