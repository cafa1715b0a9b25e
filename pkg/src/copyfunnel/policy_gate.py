"""Access gating from robots directives, TDM reservations and per-crawl prices.

The robots dialect is a strict subset of RFC 9309: group selection by exact
product-token match (falling back to ``*``) and longest-prefix rule
precedence.  ``*`` and ``$`` inside paths are matched literally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .errors import InputError


class Purpose(str, Enum):
    TRAINING = "TRAINING"
    SEARCH = "SEARCH"


class RuleKind(str, Enum):
    ALLOW = "ALLOW"
    DISALLOW = "DISALLOW"


class TdmSource(str, Enum):
    HTTP_HEADER = "HTTP_HEADER"
    META_TAG = "META_TAG"
    TERMS_FILE = "TERMS_FILE"


class TdmScope(str, Enum):
    ALL = "ALL"
    TRAINING_ONLY = "TRAINING_ONLY"


class Verdict(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    PAY = "PAY"


class Reason(str, Enum):
    ROBOTS_DISALLOW = "ROBOTS_DISALLOW"
    TDM_RESERVED = "TDM_RESERVED"
    PRICED = "PRICED"
    OPEN = "OPEN"
    PURPOSE_EXCLUDED = "PURPOSE_EXCLUDED"


# higher wins when signals from different sources disagree
SOURCE_PRECEDENCE = {TdmSource.HTTP_HEADER: 3, TdmSource.META_TAG: 2, TdmSource.TERMS_FILE: 1}

TDM_HEADER = "tdm-reservation"


@dataclass(frozen=True)
class FetchRequest:
    url: str
    agent_id: str
    purpose: Purpose = Purpose.TRAINING

    def __post_init__(self):
        if not self.agent_id:
            raise InputError("agent_id must be non-empty")
        try:
            parts = urlsplit(self.url)
        except ValueError as exc:
            raise InputError(f"unparseable url {self.url!r}") from exc
        if not parts.scheme or not parts.netloc:
            raise InputError(f"url needs a scheme and host: {self.url!r}")
        object.__setattr__(self, "purpose", Purpose(self.purpose))


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    path_pattern: str


@dataclass(frozen=True)
class Group:
    agent_patterns: tuple[str, ...]
    rules: tuple[Rule, ...]


@dataclass(frozen=True)
class CrawlDirectiveSet:
    groups: tuple[Group, ...] = ()
    crawl_delay_seconds: float | None = None

    @property
    def rules(self) -> tuple[Rule, ...]:
        return self.groups[0].rules if self.groups else ()


@dataclass(frozen=True)
class TdmSignal:
    source: TdmSource
    reserved: bool
    scope: TdmScope = TdmScope.ALL

    def as_dict(self) -> dict:
        return {"source": self.source.value, "reserved": self.reserved, "scope": self.scope.value}


@dataclass(frozen=True)
class PriceSchedule:
    """Flat per-request prices in micro-units; hosts not listed are free."""

    per_domain: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for host, price in dict(self.per_domain).items():
            if isinstance(price, bool) or not isinstance(price, int) or price < 0:
                raise InputError(f"price for {host!r} must be a non-negative integer")
            clean[host.lower()] = price
        object.__setattr__(self, "per_domain", clean)

    def price_for(self, host: str) -> int:
        return self.per_domain.get(host.lower(), 0)

    @classmethod
    def load(cls, path: str | Path) -> PriceSchedule:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError(f"{path}: price schedule must be a JSON object")
        return cls(data)


@dataclass(frozen=True)
class AccessDecision:
    verdict: Verdict
    reason: Reason
    price_micro_units: int = 0

    def __post_init__(self):
        if (self.verdict is Verdict.PAY) != (self.price_micro_units > 0):
            raise ValueError("PAY iff price > 0")

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason.value,
            "price_micro_units": self.price_micro_units,
        }


# --- robots ------------------------------------------------------------------


def _product_token(agent_id: str) -> str:
    token = agent_id.strip().split("/", 1)[0].split(None, 1)
    return token[0].lower() if token else ""


def _parse_groups(text: str) -> list[tuple[list[str], list[Rule], float | None]]:
    groups: list[tuple[list[str], list[Rule], float | None]] = []
    agents: list[str] = []
    rules: list[Rule] = []
    delay: float | None = None
    in_rules = False

    def flush():
        if agents:
            groups.append((list(agents), list(rules), delay))

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if ":" not in line:
            continue
        key, value = line.split(":", 1)
        key, value = key.strip().lower(), value.strip()
        if key == "user-agent":
            if in_rules:
                flush()
                agents, rules, delay, in_rules = [], [], None, False
            if value:
                agents.append(value.lower())
        elif key in ("allow", "disallow"):
            if not agents:
                continue
            in_rules = True
            # empty path matches nothing; relative paths are malformed
            if value.startswith("/"):
                rules.append(Rule(RuleKind(key.upper()), value))
        elif key == "crawl-delay":
            if not agents:
                continue
            in_rules = True
            try:
                seconds = float(value)
            except ValueError:
                continue
            if math.isfinite(seconds) and seconds >= 0 and delay is None:
                delay = seconds
    flush()
    return groups


def parse_robots(text: str | bytes, agent_id: str) -> CrawlDirectiveSet:
    """Select the directive group for ``agent_id``; never raises.

    Groups naming the agent's product token exactly win over ``*`` groups.
    Several groups naming the same agent are merged, as crawlers do in practice.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    groups = _parse_groups(text)
    token = _product_token(agent_id)
    chosen = [g for g in groups if token and token in g[0]]
    if not chosen:
        chosen = [g for g in groups if "*" in g[0]]
    if not chosen:
        return CrawlDirectiveSet()
    patterns = tuple(dict.fromkeys(p for g in chosen for p in g[0] if p == token or p == "*"))
    rules = tuple(r for g in chosen for r in g[1])
    delay = next((g[2] for g in chosen if g[2] is not None), None)
    return CrawlDirectiveSet(groups=(Group(patterns, rules),), crawl_delay_seconds=delay)


def is_allowed(directives: CrawlDirectiveSet, path: str) -> bool:
    best: Rule | None = None
    for rule in directives.rules:
        if not rule.path_pattern or not path.startswith(rule.path_pattern):
            continue
        if best is None or len(rule.path_pattern) > len(best.path_pattern):
            best = rule
        elif len(rule.path_pattern) == len(best.path_pattern) and rule.kind is RuleKind.ALLOW:
            best = rule
    return best is None or best.kind is RuleKind.ALLOW


# --- TDM signals -------------------------------------------------------------


class _MetaCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.metas: list[dict[str, str]] = []

    def handle_starttag(self, tag, attrs):
        if tag == "meta":
            self.metas.append({k.lower(): (v or "") for k, v in attrs})

    handle_startendtag = handle_starttag


def _merge(source: TdmSource, found: list[tuple[bool, TdmScope]]) -> TdmSignal | None:
    if not found:
        return None
    reserved = [scope for flag, scope in found if flag]
    if not reserved:
        return TdmSignal(source, False, TdmScope.ALL)
    scope = TdmScope.ALL if TdmScope.ALL in reserved else TdmScope.TRAINING_ONLY
    return TdmSignal(source, True, scope)


def _reservation_value(value: str) -> bool | None:
    value = value.strip()
    return {"1": True, "0": False}.get(value)


def parse_tdm_signals(headers: Iterable[tuple[str, str]], html_head: str = "") -> list[TdmSignal]:
    """At most one signal per source; unrecognized values are dropped."""
    header_hits = []
    for name, value in headers or ():
        if str(name).strip().lower() == TDM_HEADER:
            flag = _reservation_value(str(value))
            if flag is not None:
                header_hits.append((flag, TdmScope.ALL))

    meta_hits = []
    if html_head:
        collector = _MetaCollector()
        try:
            collector.feed(html_head)
            collector.close()
        except Exception:  # html.parser is lenient; anything it still rejects yields no meta
            pass
        for meta in collector.metas:
            name = meta.get("name", "").strip().lower()
            content = meta.get("content", "")
            if name == TDM_HEADER:
                flag = _reservation_value(content)
                if flag is not None:
                    meta_hits.append((flag, TdmScope.ALL))
            elif name == "robots":
                tokens = {t.strip().lower() for t in content.replace(",", " ").split()}
                if "noai" in tokens:
                    meta_hits.append((True, TdmScope.TRAINING_ONLY))

    signals = [_merge(TdmSource.HTTP_HEADER, header_hits), _merge(TdmSource.META_TAG, meta_hits)]
    return [s for s in signals if s is not None]


def parse_terms_file(text: str | bytes) -> TdmSignal | None:
    """Site-wide reservation file: ``{"tdm-reservation": 0|1}`` or a list of such objects."""
    try:
        data = json.loads(text)
    except (ValueError, TypeError):
        return None
    entries = data if isinstance(data, list) else [data]
    found = []
    for entry in entries:
        if isinstance(entry, dict) and TDM_HEADER in entry:
            flag = _reservation_value(str(entry[TDM_HEADER]))
            if flag is not None:
                found.append((flag, TdmScope.ALL))
    return _merge(TdmSource.TERMS_FILE, found)


def effective_reservations(signals: Sequence[TdmSignal]) -> list[TdmSignal]:
    """Reserved signals not overridden by a not-reserved signal of strictly higher precedence.

    Adding a reservation can only grow this set; only an explicit opt-in from a
    closer source removes one.
    """
    open_levels = [SOURCE_PRECEDENCE[s.source] for s in signals if not s.reserved]
    ceiling = max(open_levels, default=0)
    kept = [s for s in signals if s.reserved and SOURCE_PRECEDENCE[s.source] >= ceiling]
    return sorted(set(kept), key=lambda s: (-SOURCE_PRECEDENCE[s.source], s.scope.value))


# --- resolution --------------------------------------------------------------


def url_path_and_host(url: str) -> tuple[str, str]:
    try:
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
    except ValueError:
        return "/", ""
    path = parts.path or "/"
    if not path.startswith("/"):
        path = "/" + path
    if parts.query:
        path += "?" + parts.query
    return path, host


def resolve_access(
    request: FetchRequest,
    directives: CrawlDirectiveSet,
    signals: Sequence[TdmSignal],
    prices: PriceSchedule,
) -> AccessDecision:
    path, host = url_path_and_host(request.url)
    if not is_allowed(directives, path):
        return AccessDecision(Verdict.DENY, Reason.ROBOTS_DISALLOW)

    reservations = effective_reservations(signals)
    if any(s.scope is TdmScope.ALL or request.purpose is Purpose.TRAINING for s in reservations):
        return AccessDecision(Verdict.DENY, Reason.TDM_RESERVED)
    purpose_excluded = bool(reservations)

    price = prices.price_for(host)
    if price > 0:
        return AccessDecision(Verdict.PAY, Reason.PRICED, price)
    return AccessDecision(Verdict.ALLOW, Reason.PURPOSE_EXCLUDED if purpose_excluded else Reason.OPEN)
