"""Pairwise judge harness: prompts, position debiasing, accuracy scoring.

Any judge — an HTTP endpoint or the built-in metric-ensemble mock — is driven
through the shipped decide-only prompt templates, with candidate positions
swapped pseudo-randomly per pair so position bias cancels. Verdicts are parsed
leniently from the response text, mapped back to canonical A/B, and scored
against gold preference pairs per task with an unweighted macro average.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .ranking import ComparisonRecord

JUDGE_DIMENSIONS = ("IF", "VQ", "VC")
_PROMPT_FILES = {"IF": "if_pairwise.txt", "VQ": "vq_pairwise.txt", "VC": "vc_pairwise.txt"}
VERDICT_A = "A"
VERDICT_B = "B"
VERDICT_TIE = "Tie"
VERDICT_INVALID = "invalid"


class JudgeError(RuntimeError):
    """Raised when a judge cannot be queried (transport, missing prompt)."""


@dataclass(frozen=True)
class PromptTemplate:
    dimension: str
    system: str
    user: str

    @property
    def image_slots(self) -> list[str]:
        """Slot names like image_1 in order of appearance in the user part."""
        slots = []
        idx = 1
        while f"<image_{idx}>" in self.user:
            slots.append(f"image_{idx}")
            idx += 1
        return slots


def load_prompt(dimension: str) -> PromptTemplate:
    """Load the shipped pairwise template for one evaluation dimension."""
    if dimension not in _PROMPT_FILES:
        raise JudgeError(f"no prompt template for dimension {dimension!r}; use one of {JUDGE_DIMENSIONS}")
    text = (resources.files("editeval") / "prompts" / _PROMPT_FILES[dimension]).read_text(encoding="utf-8")
    if not text.startswith("[SYSTEM]\n") or "\n[USER]\n" not in text:
        raise JudgeError(f"prompt asset for {dimension} is malformed")
    system, user = text[len("[SYSTEM]\n") :].split("\n[USER]\n", 1)
    return PromptTemplate(dimension=dimension, system=system.strip("\n"), user=user.strip("\n"))


@dataclass
class JudgeVerdict:
    winner: str
    raw: str

    def __post_init__(self):
        if self.winner not in (VERDICT_A, VERDICT_B, VERDICT_TIE, VERDICT_INVALID):
            raise ValueError(f"bad verdict winner {self.winner!r}")


@dataclass
class GoldPair:
    """A human-annotated pair with a strict preference on visual consistency."""

    pair_id: str
    task: str
    instruction: str
    original: object
    candidate_a: object
    candidate_b: object
    human_preference: str

    def __post_init__(self):
        if self.human_preference not in (VERDICT_A, VERDICT_B):
            raise ValueError(
                f"gold pair {self.pair_id!r} needs a strict preference, got {self.human_preference!r}"
            )

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "task": self.task,
            "instruction": self.instruction,
            "original": self.original,
            "candidate_a": self.candidate_a,
            "candidate_b": self.candidate_b,
            "human_preference": self.human_preference,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GoldPair":
        return cls(
            pair_id=obj["pair_id"],
            task=obj.get("task", ""),
            instruction=obj.get("instruction", ""),
            original=obj.get("original"),
            candidate_a=obj["candidate_a"],
            candidate_b=obj["candidate_b"],
            human_preference=obj["human_preference"],
        )


def swap_decision(seed: int, pair_id: str) -> bool:
    """Deterministic fair coin from a hash of the seed and pair id."""
    digest = hashlib.sha256(f"{seed}:{pair_id}".encode("utf-8")).digest()
    return bool(digest[0] & 1)


def debias_order(pair: GoldPair, seed: int) -> tuple[object, object, bool]:
    """Presentation order for a pair: (left, right, swapped)."""
    if swap_decision(seed, pair.pair_id):
        return pair.candidate_b, pair.candidate_a, True
    return pair.candidate_a, pair.candidate_b, False


def _balanced_objects(text: str) -> Iterable[str]:
    """Yield balanced {...} substrings in order of their opening brace."""
    opens = [i for i, ch in enumerate(text) if ch == "{"]
    for start in opens:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start : i + 1]
                    break


def parse_verdict(raw: str) -> JudgeVerdict:
    """Extract the winner from a judge response, tolerating surrounding prose.

    The first well-formed JSON object containing a "winner" field decides;
    anything unreadable or outside {Image A, Image B, Tie} is invalid.
    """
    for candidate in _balanced_objects(raw):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or "winner" not in obj:
            continue
        value = str(obj["winner"]).strip().strip("'\"`.").strip().lower()
        if value in ("image a", "a"):
            return JudgeVerdict(VERDICT_A, raw)
        if value in ("image b", "b"):
            return JudgeVerdict(VERDICT_B, raw)
        if value == "tie":
            return JudgeVerdict(VERDICT_TIE, raw)
        return JudgeVerdict(VERDICT_INVALID, raw)
    return JudgeVerdict(VERDICT_INVALID, raw)


@dataclass
class JudgeRequest:
    """Everything a judge sees for one comparison, in template order."""

    dimension: str
    system: str
    user: str
    images: list[tuple[str, object]]


class MockJudge:
    """Deterministic stand-in judge driven by per-candidate metric scores.

    Candidate payloads are mappings with a ``scores`` entry of oriented metric
    values. The left image wins when all its scores strictly dominate, loses
    when all trail, and everything else is a tie — a tiny stand-alone metric
    ensemble that makes the harness fully testable offline.
    """

    def decide(self, request: JudgeRequest) -> str:
        payloads = {slot: img for slot, img in request.images}
        slots = [slot for slot, _ in request.images]
        left = payloads[slots[-2]]
        right = payloads[slots[-1]]
        ls = left["scores"]
        rs = right["scores"]
        keys = sorted(ls)
        if keys != sorted(rs):
            return json.dumps({"winner": "Tie"})
        if all(ls[k] > rs[k] for k in keys):
            winner = "Image A"
        elif all(rs[k] > ls[k] for k in keys):
            winner = "Image B"
        else:
            winner = "Tie"
        return json.dumps({"winner": winner})


def encode_image(ref: object) -> str:
    """Base64 for bytes or readable files; strings pass through untouched."""
    if isinstance(ref, bytes):
        return base64.b64encode(ref).decode("ascii")
    if isinstance(ref, Path):
        return base64.b64encode(ref.read_bytes()).decode("ascii")
    if isinstance(ref, str):
        p = Path(ref)
        if p.is_file():
            return base64.b64encode(p.read_bytes()).decode("ascii")
        return ref
    raise JudgeError(f"cannot encode image reference of type {type(ref).__name__}")


class EndpointJudge:
    """Judge backed by an HTTP endpoint taking one POST per comparison.

    The wire format is a single JSON body with the system and user prompt
    texts plus base64 images keyed by their template slots; the response body
    is searched for the structured winner object. Transport is injectable for
    testing and retried with exponential backoff.
    """

    def __init__(
        self,
        url: str,
        transport: Callable[[str, dict], str] | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.transport = transport if transport is not None else self._http_post
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep

    @staticmethod
    def _http_post(url: str, payload: dict) -> str:
        import httpx

        response = httpx.post(url, json=payload, timeout=120.0)
        response.raise_for_status()
        return response.text

    def decide(self, request: JudgeRequest) -> str:
        payload = {
            "dimension": request.dimension,
            "system": request.system,
            "user": request.user,
            "images": [{"slot": slot, "data": encode_image(img)} for slot, img in request.images],
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                return self.transport(self.url, payload)
            except Exception as exc:  # noqa: BLE001 - transport errors vary by backend
                last_error = exc
                if attempt < self.retries - 1:
                    self.sleep(self.backoff * (2**attempt))
        raise JudgeError(f"judge endpoint failed after {self.retries} attempts: {last_error}")


def query_judge(
    judge,
    instruction: str,
    original: object,
    left: object,
    right: object,
    dimension: str = "VC",
    swapped: bool = False,
) -> JudgeVerdict:
    """Send one debiased comparison to a judge and canonicalize its verdict.

    ``left``/``right`` are the presented positions; when ``swapped`` is set the
    parsed winner is flipped back so A always refers to the canonical first
    candidate.
    """
    template = load_prompt(dimension)
    user = template.user.replace("<instruction>", instruction)
    slots = template.image_slots
    if len(slots) == 3:
        images = [(slots[0], original), (slots[1], left), (slots[2], right)]
    else:
        images = [(slots[0], left), (slots[1], right)]
    raw = judge.decide(JudgeRequest(dimension=dimension, system=template.system, user=user, images=images))
    verdict = parse_verdict(raw)
    if swapped and verdict.winner in (VERDICT_A, VERDICT_B):
        flipped = VERDICT_B if verdict.winner == VERDICT_A else VERDICT_A
        return JudgeVerdict(flipped, raw)
    return verdict


@dataclass
class TaskAccuracy:
    task: str
    correct: int = 0
    valid: int = 0
    ties: int = 0
    invalid: int = 0

    @property
    def accuracy(self) -> float | None:
        if self.valid == 0:
            return None
        return self.correct / self.valid


@dataclass
class JudgeReport:
    per_task: dict[str, TaskAccuracy] = field(default_factory=dict)
    total_pairs: int = 0

    @property
    def flagged_tasks(self) -> list[str]:
        return sorted(t for t, acc in self.per_task.items() if acc.valid == 0)

    @property
    def macro_average(self) -> float:
        accs = {t: a.accuracy for t, a in self.per_task.items() if a.accuracy is not None}
        return macro_average(accs)

    @property
    def tie_rate(self) -> float:
        valid = sum(a.valid for a in self.per_task.values())
        if valid == 0:
            return 0.0
        return sum(a.ties for a in self.per_task.values()) / valid

    @property
    def invalid_rate(self) -> float:
        if self.total_pairs == 0:
            return 0.0
        return sum(a.invalid for a in self.per_task.values()) / self.total_pairs

    def render(self) -> str:
        """Plain-text report with one row per task plus the macro average."""
        width = max([len("task")] + [len(t) for t in self.per_task])
        lines = [f"{'task'.ljust(width)}  accuracy  correct/valid  ties  invalid"]
        for task in sorted(self.per_task):
            acc = self.per_task[task]
            shown = "n/a" if acc.accuracy is None else f"{100 * acc.accuracy:8.2f}"
            lines.append(
                f"{task.ljust(width)}  {shown:>8}  {acc.correct:>7}/{acc.valid:<5}  {acc.ties:>4}  {acc.invalid:>7}"
            )
        lines.append(f"{'macro average'.ljust(width)}  {100 * self.macro_average:8.2f}")
        lines.append(f"tie rate {100 * self.tie_rate:.2f}%  invalid rate {100 * self.invalid_rate:.2f}%")
        return "\n".join(lines)


def macro_average(per_task_accuracy: Mapping[str, float]) -> float:
    """Unweighted mean accuracy across tasks."""
    if not per_task_accuracy:
        raise ValueError("macro average needs at least one task accuracy")
    return float(sum(per_task_accuracy.values()) / len(per_task_accuracy))


def evaluate_judge(judge, gold: Sequence[GoldPair], seed: int = 0, dimension: str = "VC") -> JudgeReport:
    """Score a judge against gold pairs with per-task and macro accuracy.

    Tie verdicts on strict gold preferences count as incorrect and feed the
    separate tie rate; unparseable or failed queries are excluded from the
    accuracy denominator but reported as the invalid rate.
    """
    if not gold:
        raise ValueError("evaluate_judge needs at least one gold pair")
    report = JudgeReport(total_pairs=len(gold))
    for pair in gold:
        acc = report.per_task.setdefault(pair.task, TaskAccuracy(task=pair.task))
        left, right, swapped = debias_order(pair, seed)
        try:
            verdict = query_judge(
                judge, pair.instruction, pair.original, left, right, dimension=dimension, swapped=swapped
            )
        except JudgeError as exc:
            verdict = JudgeVerdict(VERDICT_INVALID, f"error: {exc}")
        if verdict.winner == VERDICT_INVALID:
            acc.invalid += 1
            continue
        acc.valid += 1
        if verdict.winner == VERDICT_TIE:
            acc.ties += 1
        elif verdict.winner == pair.human_preference:
            acc.correct += 1
    return report


@dataclass
class TournamentSample:
    """One evaluation sample with each model's output reference."""

    sample_id: str
    task: str
    instruction: str
    original: object
    outputs: dict[str, object]


@dataclass
class TournamentResult:
    records: list[ComparisonRecord] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)


def pairwise_tournament(
    samples: Sequence[TournamentSample], judge, seed: int = 0, dimension: str = "VC"
) -> TournamentResult:
    """Judge every unordered model pair once per sample with debiased order.

    Samples missing a model's output simply skip pairings involving it;
    invalid verdicts are logged as failures instead of becoming records.
    """
    result = TournamentResult()
    for sample in samples:
        models = sorted(sample.outputs)
        for i, model_a in enumerate(models):
            for model_b in models[i + 1 :]:
                pair_id = f"{sample.sample_id}:{model_a}:{model_b}"
                swapped = swap_decision(seed, pair_id)
                a_ref, b_ref = sample.outputs[model_a], sample.outputs[model_b]
                left, right = (b_ref, a_ref) if swapped else (a_ref, b_ref)
                try:
                    verdict = query_judge(
                        judge,
                        sample.instruction,
                        sample.original,
                        left,
                        right,
                        dimension=dimension,
                        swapped=swapped,
                    )
                except JudgeError as exc:
                    result.failures.append(f"{pair_id}: {exc}")
                    continue
                if verdict.winner == VERDICT_INVALID:
                    result.failures.append(f"{pair_id}: invalid verdict")
                    continue
                outcome = {"A": "A", "B": "B", "Tie": "tie"}[verdict.winner]
                result.records.append(
                    ComparisonRecord(
                        sample_id=sample.sample_id,
                        task=sample.task,
                        dimension=dimension,
                        model_a=model_a,
                        model_b=model_b,
                        outcome=outcome,
                    )
                )
    return result
