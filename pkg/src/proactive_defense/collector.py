"""Telemetry reconstruction: parse, normalize, deduplicate, aggregate.

Each raw event is classified as an ``alert`` (merged into the alert list),
a ``metric`` (absorbed into the status summary) or ``irrelevant`` (counted
in ``dropped_irrelevant``). Sensors may pre-aggregate with a ``repeat``
field; an event with ``repeat: n`` stands for ``n`` identical occurrences.

Record schema, version 1 (JSON)::

    {
      "schema_version": 1,
      "round_id": int,
      "status_summary": {<metric>: number | list | object, ...},
      "alerts": [{"kind": str, "source": str | null, "count": int >= 1,
                  "first_seen": ISO-8601, "last_seen": ISO-8601,
                  "variants": [{"username": str | null, "status": str | null, "count": int}]}],
      "dropped_irrelevant": int,
      "absorbed": int,
      "parse_warnings": [{"index": int, "reason": str}]
    }
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping, Optional

SCHEMA_VERSION = 1

DEFAULT_CLASSES = {
    "heartbeat": "irrelevant",
    "status_ok": "irrelevant",
    "service_metrics": "metric",
    "http_request": "metric",
    "vm_contention": "metric",
    "victim_progress": "metric",
}
CLASSES = ("alert", "metric", "irrelevant")

# how per-step metric samples fold into one round value
AGGREGATE = {
    "cpu_util": "mean",
    "memory_util": "mean",
    "legit_offered": "sum",
    "legit_served": "sum",
    "gain": "min",
}

_KNOWN = {"timestamp", "event", "source_ip", "username", "status", "metrics", "repeat"}


class ParseError(ValueError):
    pass


@dataclass
class RawEvent:
    timestamp: datetime
    event: str
    source_ip: Optional[str] = None
    username: Optional[str] = None
    status: Optional[str] = None
    metrics: Optional[dict] = None
    repeat: int = 1
    extra: dict = field(default_factory=dict)


@dataclass
class Alert:
    kind: str
    source: Optional[str]
    count: int
    first_seen: str
    last_seen: str
    variants: list = field(default_factory=list)


@dataclass
class SecurityRecord:
    round_id: int
    status_summary: dict
    alerts: list
    dropped_irrelevant: int = 0
    absorbed: int = 0
    parse_warnings: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def alert(self, kind: str, source: Optional[str] = None) -> Optional[Alert]:
        for a in self.alerts:
            if a.kind == kind and (source is None or a.source == source):
                return a
        return None

    def alert_total(self, *kinds: str) -> int:
        return sum(a.count for a in self.alerts if a.kind in kinds)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SecurityRecord":
        alerts = [Alert(**a) for a in data.get("alerts", [])]
        return cls(
            round_id=data["round_id"],
            status_summary=dict(data.get("status_summary", {})),
            alerts=alerts,
            dropped_irrelevant=data.get("dropped_irrelevant", 0),
            absorbed=data.get("absorbed", 0),
            parse_warnings=list(data.get("parse_warnings", [])),
            schema_version=data.get("schema_version", SCHEMA_VERSION),
        )


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_event(raw: Any) -> RawEvent:
    """Normalize one raw telemetry entry; raises :class:`ParseError`."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not JSON: {exc.msg}") from None
    if not isinstance(raw, Mapping):
        raise ParseError(f"expected an object, got {type(raw).__name__}")
    name = raw.get("event")
    if not isinstance(name, str) or not name.strip():
        raise ParseError("missing event name")
    ts = raw.get("timestamp")
    if not isinstance(ts, str):
        raise ParseError("missing timestamp")
    try:
        parsed = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"bad timestamp {ts!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    repeat = raw.get("repeat", 1)
    if isinstance(repeat, bool) or not isinstance(repeat, int) or repeat < 1:
        raise ParseError(f"bad repeat {repeat!r}")
    metrics = raw.get("metrics")
    if metrics is not None and not isinstance(metrics, Mapping):
        raise ParseError("metrics must be an object")

    def text(key: str) -> Optional[str]:
        v = raw.get(key)
        return None if v is None else str(v).strip()

    return RawEvent(
        timestamp=parsed,
        event=name.strip().lower(),
        source_ip=text("source_ip"),
        username=text("username"),
        status=None if raw.get("status") is None else str(raw["status"]).strip().lower(),
        metrics=dict(metrics) if metrics is not None else None,
        repeat=repeat,
        extra={k: v for k, v in raw.items() if k not in _KNOWN},
    )


def classify(name: str, table: Optional[Mapping[str, str]] = None) -> str:
    if table and name in table:
        return table[name]
    return DEFAULT_CLASSES.get(name, "alert")


def _fold_metrics(samples: list[tuple[dict, int]], vm_events: list[dict], gains: list[dict]) -> dict:
    summary: dict[str, Any] = {}
    if samples:
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for metrics, _ in samples:
            for key, value in metrics.items():
                rule = AGGREGATE.get(key, "last")
                if rule in ("mean", "sum") and isinstance(value, (int, float)):
                    sums[key] = sums.get(key, 0.0) + value
                    counts[key] = counts.get(key, 0) + 1
                else:
                    summary[key] = value
        for key, total in sums.items():
            if AGGREGATE[key] == "mean":
                summary[key] = total / counts[key]
            else:
                summary[key] = int(total) if float(total).is_integer() else total
        summary["samples"] = len(samples)
    if vm_events:
        per_vm: dict[str, dict] = {}
        for m in vm_events:
            vm = str(m.get("vm_id"))
            cur = per_vm.setdefault(vm, {"demand": 0.0, "effective": 0.0, "co_resident": False})
            cur["demand"] = max(cur["demand"], float(m.get("demand", 0.0)))
            if m.get("co_resident"):
                cur["effective"] = max(cur["effective"], float(m.get("effective", 0.0)))
                cur["co_resident"] = True
        summary["vm_contention"] = dict(sorted(per_vm.items()))
        summary["max_contention_demand"] = max(v["demand"] for v in per_vm.values())
        summary["co_resident_contention"] = sum(v["effective"] for v in per_vm.values())
    if gains:
        summary["victim_gain_min"] = min(float(g.get("gain", 1.0)) for g in gains)
        summary["victim_gain_mean"] = sum(float(g.get("gain", 1.0)) for g in gains) / len(gains)
        summary["victim_progress"] = float(gains[-1].get("progress", 0.0))
    return summary


def collect(
    raw_events: Iterable[Any],
    round_id: int = 0,
    classes: Optional[Mapping[str, str]] = None,
) -> SecurityRecord:
    """Reduce one round of raw telemetry to a :class:`SecurityRecord`.

    Malformed entries are quarantined into ``parse_warnings`` and never
    abort the round. ``classes`` overrides the default relevance table.
    """
    warnings: list[dict] = []
    groups: dict[tuple, dict] = {}
    dropped = absorbed = 0
    samples: list[tuple[dict, int]] = []
    vm_events: list[dict] = []
    gains: list[dict] = []

    for index, raw in enumerate(raw_events):
        try:
            ev = parse_event(raw)
        except ParseError as exc:
            warnings.append({"index": index, "reason": str(exc)})
            continue
        cls = classify(ev.event, classes)
        if cls == "irrelevant":
            dropped += ev.repeat
            continue
        if cls == "metric":
            absorbed += ev.repeat
            if ev.metrics:
                if ev.event == "vm_contention":
                    vm_events.append(ev.metrics)
                elif ev.event == "victim_progress":
                    gains.append(ev.metrics)
                else:
                    samples.append((ev.metrics, ev.repeat))
            continue
        key = (ev.event, ev.source_ip, ev.username, ev.status)
        g = groups.get(key)
        if g is None:
            groups[key] = {"count": ev.repeat, "first": ev.timestamp, "last": ev.timestamp}
        else:
            g["count"] += ev.repeat
            g["first"] = min(g["first"], ev.timestamp)
            g["last"] = max(g["last"], ev.timestamp)

    merged: dict[tuple, Alert] = {}
    for (kind, source, username, status), g in sorted(groups.items(), key=lambda kv: tuple(str(x) for x in kv[0])):
        alert = merged.get((kind, source))
        variant = {"username": username, "status": status, "count": g["count"]}
        if alert is None:
            merged[(kind, source)] = Alert(kind, source, g["count"], _iso(g["first"]), _iso(g["last"]), [variant])
        else:
            alert.count += g["count"]
            alert.first_seen = min(alert.first_seen, _iso(g["first"]))
            alert.last_seen = max(alert.last_seen, _iso(g["last"]))
            alert.variants.append(variant)

    alerts = sorted(merged.values(), key=lambda a: (a.kind, a.source or ""))
    return SecurityRecord(
        round_id=round_id,
        status_summary=_fold_metrics(samples, vm_events, gains),
        alerts=alerts,
        dropped_irrelevant=dropped,
        absorbed=absorbed,
        parse_warnings=warnings,
    )


def validate_record(record: SecurityRecord) -> list[str]:
    """Every violated record invariant; an empty list means the record is valid."""
    problems = []
    if record.schema_version != SCHEMA_VERSION:
        problems.append(f"schema_version {record.schema_version} != {SCHEMA_VERSION}")
    if not isinstance(record.status_summary, dict):
        problems.append("status_summary is not an object")
    if record.dropped_irrelevant < 0 or record.absorbed < 0:
        problems.append("negative drop/absorb counters")
    seen = set()
    for a in record.alerts:
        key = (a.kind, a.source)
        if key in seen:
            problems.append(f"duplicate alert {key}")
        seen.add(key)
        if not isinstance(a.count, int) or a.count < 1:
            problems.append(f"alert {key} has count {a.count}")
        if a.variants and sum(v["count"] for v in a.variants) != a.count:
            problems.append(f"alert {key} variant counts do not sum to {a.count}")
        for stamp in (a.first_seen, a.last_seen):
            try:
                datetime.fromisoformat(str(stamp).replace("Z", "+00:00"))
            except ValueError:
                problems.append(f"alert {key} has bad timestamp {stamp!r}")
        if a.first_seen > a.last_seen:
            problems.append(f"alert {key} first_seen after last_seen")
    return problems


def record_to_raw(record: SecurityRecord) -> list[dict]:
    """Re-serialize a record as raw events; ``collect`` of the result reproduces it."""
    events: list[dict] = []
    ts_any = None
    for a in record.alerts:
        ts_any = ts_any or a.first_seen
        for v in a.variants or [{"username": None, "status": None, "count": a.count}]:
            base = {"event": a.kind, "source_ip": a.source, "username": v["username"], "status": v["status"]}
            if v["count"] > 1 and a.first_seen != a.last_seen:
                events.append({**base, "timestamp": a.first_seen, "repeat": v["count"] - 1})
                events.append({**base, "timestamp": a.last_seen, "repeat": 1})
            else:
                events.append({**base, "timestamp": a.first_seen, "repeat": v["count"]})
    ts = ts_any or "1970-01-01T00:00:00Z"
    summary = dict(record.status_summary)
    if record.absorbed:
        vm = summary.pop("vm_contention", None)
        for key in ("max_contention_demand", "co_resident_contention", "samples"):
            summary.pop(key, None)
        gain = {k: summary.pop(k) for k in ("victim_gain_min", "victim_gain_mean", "victim_progress") if k in summary}
        extra = 0
        if vm:
            for vm_id, m in vm.items():
                events.append({"timestamp": ts, "event": "vm_contention", "repeat": 1, "metrics": {
                    "vm_id": vm_id, "demand": m["demand"], "effective": m["effective"], "co_resident": m["co_resident"]}})
                extra += 1
        if gain:
            events.append({"timestamp": ts, "event": "victim_progress", "repeat": 1, "metrics": {
                "gain": gain.get("victim_gain_min", 1.0), "progress": gain.get("victim_progress", 0.0)}})
            extra += 1
        rest = record.absorbed - extra
        if summary or rest > 0:
            events.append({"timestamp": ts, "event": "service_metrics", "repeat": max(rest, 1), "metrics": summary})
    if record.dropped_irrelevant:
        events.append({"timestamp": ts, "event": "heartbeat", "status": "ok", "repeat": record.dropped_irrelevant})
    return events
