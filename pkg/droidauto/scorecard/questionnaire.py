"""Transparency and interpretability scorecards.

A questionnaire groups questions into five fixed categories; each question is
answered 0 (not applicable), 1 (partial) or 2 (total). A category scores
100 * sum(answers) / (2 * questions), and a tool's overall score is the plain
mean of its five category scores.
"""
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import pandas as pd
import yaml

logger = logging.getLogger(__name__)

CATEGORIES = (
    "Functional Description",
    "Statistical Analysis",
    "Algorithmic Transparency",
    "Interpretability",
    "Internal Analysis",
)
MAX_POINTS = 2
ANSWER_LABELS = {"not applicable": 0, "partial": 1, "total": 2}
DEFAULT_QUESTIONNAIRE = "default_questionnaire.yaml"


@dataclass(frozen=True)
class Question:
    text: str
    answer: int


@dataclass(frozen=True)
class Questionnaire:
    tool: str
    categories: dict[str, tuple[Question, ...]] = field(default_factory=dict)

    @property
    def n_questions(self) -> int:
        return sum(len(qs) for qs in self.categories.values())


@dataclass(frozen=True)
class Scorecard:
    tool: str
    scores: dict[str, float]
    overall: float


def parse_answer(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"invalid answer {value!r}")
    if isinstance(value, str):
        key = value.strip().lower()
        if key in ANSWER_LABELS:
            return ANSWER_LABELS[key]
        if key.isdigit():
            value = int(key)
        else:
            raise ValueError(f"invalid answer {value!r}; expected 0/1/2 or Not applicable/Partial/Total")
    if isinstance(value, int) and 0 <= value <= MAX_POINTS:
        return value
    raise ValueError(f"invalid answer {value!r}; expected 0, 1 or 2")


def questionnaire_from_dict(raw: dict) -> Questionnaire:
    if not isinstance(raw, dict) or "categories" not in raw:
        raise ValueError("questionnaire needs a 'categories' list")
    tool = str(raw.get("tool", "")).strip()
    if not tool:
        raise ValueError("questionnaire needs a 'tool' name")
    parsed: dict[str, tuple[Question, ...]] = {}
    for entry in raw["categories"] or []:
        name = entry.get("name")
        if name not in CATEGORIES:
            raise ValueError(f"unknown category {name!r}; expected one of {', '.join(CATEGORIES)}")
        if name in parsed:
            raise ValueError(f"category {name!r} appears twice")
        questions = []
        for q in entry.get("questions") or []:
            if "answer" not in q:
                raise ValueError(f"question {q.get('text', '?')!r} in {name!r} has no answer")
            questions.append(Question(text=str(q.get("text", "")), answer=parse_answer(q["answer"])))
        parsed[name] = tuple(questions)
    ordered = {name: parsed[name] for name in CATEGORIES if name in parsed}
    return Questionnaire(tool=tool, categories=ordered)


def load_questionnaire(path: Path | str | None = None) -> Questionnaire:
    """Read a questionnaire YAML file; without a path, the bundled default."""
    if path is None:
        text = resources.files("droidauto.scorecard").joinpath(DEFAULT_QUESTIONNAIRE).read_text(encoding="utf-8")
    else:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"questionnaire not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"malformed questionnaire: {exc}") from exc
    return questionnaire_from_dict(raw)


def score_category(answers) -> float:
    answers = [parse_answer(a) for a in answers]
    if not answers:
        raise ValueError("cannot score a category with no questions")
    return 100.0 * sum(answers) / (MAX_POINTS * len(answers))


def score_tool(q: Questionnaire) -> Scorecard:
    missing = [name for name in CATEGORIES if name not in q.categories]
    if missing:
        raise ValueError(f"questionnaire for {q.tool!r} is missing categories: {', '.join(missing)}")
    scores = {}
    for name in CATEGORIES:
        try:
            scores[name] = score_category(question.answer for question in q.categories[name])
        except ValueError as exc:
            raise ValueError(f"{name}: {exc}") from exc
    overall = sum(scores.values()) / len(scores)
    logger.debug("Scored %s: overall %.2f", q.tool, overall)
    return Scorecard(tool=q.tool, scores=scores, overall=overall)


def compare_scorecards(cards) -> pd.DataFrame:
    """Tools x categories matrix (input order) with an Overall column."""
    cards = list(cards)
    if not cards:
        raise ValueError("need at least one scorecard to compare")
    rows = [[card.scores[name] for name in CATEGORIES] + [card.overall] for card in cards]
    frame = pd.DataFrame(rows, columns=[*CATEGORIES, "Overall"], index=[card.tool for card in cards])
    frame.index.name = "tool"
    return frame


def scorecard_to_dict(card: Scorecard) -> dict:
    return {
        "tool": card.tool,
        "scores": {name: round(card.scores[name], 2) for name in CATEGORIES},
        "overall": round(card.overall, 2),
    }


def write_scorecard(card: Scorecard, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(scorecard_to_dict(card), f, default_flow_style=False, sort_keys=False)
    return path
