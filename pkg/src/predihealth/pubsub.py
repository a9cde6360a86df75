"""In-process topic channel with MQTT-style topics, per-stream ordering,
and bounded-queue backpressure.

Devices publish to ``predihealth/<patient_id>/<metric>``. Each topic hashes
to one partition; a partition worker drains its queue in FIFO order, so
messages for one (patient, metric) stream are processed in publish order
while distinct streams proceed concurrently. ``publish`` blocks once the
partition queue is full -- the channel slows producers down rather than
dropping. QoS-1 style re-publishes are collapsed by the gateway's
idempotency key.
"""

from __future__ import annotations

import queue
import threading
from concurrent.futures import Future
from typing import Union

from .gateway import Ack, IngestGateway, ValidationFailed, parse_message

TOPIC_PREFIX = "predihealth"


class BadTopic(Exception):
    code = "bad_topic"


def topic_for(patient_id: str, metric: str) -> str:
    return f"{TOPIC_PREFIX}/{patient_id}/{metric}"


def parse_topic(topic: str) -> tuple[str, str]:
    parts = topic.split("/")
    if len(parts) != 3 or parts[0] != TOPIC_PREFIX or not parts[1] or not parts[2]:
        raise BadTopic(f"topic must be {TOPIC_PREFIX}/<patient_id>/<metric>: {topic!r}")
    return parts[1], parts[2]


class PubSubChannel:
    """Topic front end for the gateway; one consumer group, N partitions."""

    def __init__(self, gateway: IngestGateway, partitions: int = 4, queue_size: int = 256):
        if partitions < 1:
            raise ValueError("need at least one partition")
        self._gateway = gateway
        self._queues: list[queue.Queue] = [
            queue.Queue(maxsize=queue_size) for _ in range(partitions)
        ]
        self._workers = [
            threading.Thread(target=self._drain, args=(q,), daemon=True)
            for q in self._queues
        ]
        self._closed = False
        for worker in self._workers:
            worker.start()

    def publish(self, topic: str, payload: Union[bytes, str]) -> "Future[Ack]":
        """Queue one message; the returned future resolves to the gateway
        Ack (or its rejection). Blocks while the partition queue is full."""
        if self._closed:
            raise RuntimeError("channel is closed")
        patient_id, metric = parse_topic(topic)
        future: "Future[Ack]" = Future()
        partition = hash((patient_id, metric)) % len(self._queues)
        self._queues[partition].put((topic, payload, future))
        return future

    def _drain(self, q: queue.Queue) -> None:
        while True:
            item = q.get()
            if item is None:
                return
            topic, payload, future = item
            try:
                patient_id, metric = parse_topic(topic)
                msg = parse_message(payload)
                if msg.patient_id != patient_id or msg.metric != metric:
                    raise ValidationFailed(
                        f"payload ({msg.patient_id}/{msg.metric}) does not match "
                        f"topic {topic}"
                    )
                future.set_result(self._gateway.ingest(msg))
            except BaseException as exc:  # every rejection flows to the future
                future.set_exception(exc)
            finally:
                q.task_done()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for q in self._queues:
            q.put(None)
        for worker in self._workers:
            worker.join(timeout=5)

    def __enter__(self) -> "PubSubChannel":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
