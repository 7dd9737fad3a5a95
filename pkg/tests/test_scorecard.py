import pytest
import yaml

from droidauto.scorecard import (
    CATEGORIES,
    compare_scorecards,
    load_questionnaire,
    score_category,
    score_tool,
    scorecard_to_dict,
    write_scorecard,
)
from droidauto.scorecard.questionnaire import parse_answer, questionnaire_from_dict


def _questionnaire(tool="demo", **answers):
    """Answers per category keyword (spaces as underscores); unspecified ones are all 2."""
    sizes = dict(zip(CATEGORIES, (4, 5, 4, 6, 1)))
    categories = []
    for name in CATEGORIES:
        values = answers.get(name.replace(" ", "_"), [2] * sizes[name])
        categories.append({"name": name, "questions": [{"text": f"q{i}", "answer": a} for i, a in enumerate(values)]})
    return {"tool": tool, "categories": categories}


def test_bundled_questionnaire_has_twenty_questions():
    q = load_questionnaire()
    assert q.tool == "droidauto"
    assert [len(q.categories[name]) for name in CATEGORIES] == [4, 5, 4, 6, 1]
    assert q.n_questions == 20
    card = score_tool(q)
    assert card.overall == 100.0


def test_category_scores():
    assert score_category([2, 2, 2, 2]) == 100.0
    assert score_category([2, 2, 2, 0]) == 75.0
    assert score_category([0, 0, 0]) == 0.0
    assert score_category([1]) == 50.0
    with pytest.raises(ValueError):
        score_category([])


def test_tool_score_matches_reported_examples():
    raw = _questionnaire(Interpretability=[2, 2, 1, 1, 1, 0], Internal_Analysis=[1])
    card = score_tool(questionnaire_from_dict(raw))
    assert card.scores["Interpretability"] == pytest.approx(58.33, abs=0.01)
    assert card.scores["Internal Analysis"] == 50.0
    assert card.overall == pytest.approx((100 * 3 + 700 / 12 + 50) / 5)
    assert scorecard_to_dict(card)["scores"]["Interpretability"] == 58.33


def test_answer_parsing():
    assert parse_answer("Partial") == 1
    assert parse_answer("total") == 2
    assert parse_answer("0") == 0
    for bad in (3, -1, True, "maybe", 1.5):
        with pytest.raises(ValueError):
            parse_answer(bad)


def test_answer_three_is_a_parse_error():
    with pytest.raises(ValueError):
        questionnaire_from_dict(_questionnaire(Internal_Analysis=[3]))


def test_structural_errors():
    raw = _questionnaire()
    raw["categories"].append({"name": "Usability", "questions": []})
    with pytest.raises(ValueError, match="unknown category"):
        questionnaire_from_dict(raw)

    raw = _questionnaire()
    raw["categories"].append(dict(raw["categories"][0]))
    with pytest.raises(ValueError, match="twice"):
        questionnaire_from_dict(raw)

    raw = _questionnaire()
    del raw["categories"][0]
    with pytest.raises(ValueError, match="missing categories"):
        score_tool(questionnaire_from_dict(raw))


def test_empty_category_parses_but_cannot_be_scored():
    q = questionnaire_from_dict(_questionnaire(Internal_Analysis=[]))
    assert q.categories["Internal Analysis"] == ()
    with pytest.raises(ValueError, match="Internal Analysis"):
        score_tool(q)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_questionnaire(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("tool: [unclosed\n")
    with pytest.raises(ValueError):
        load_questionnaire(bad)


def test_compare_scorecards_shape():
    cards = [score_tool(questionnaire_from_dict(_questionnaire(tool=f"tool{i}"))) for i in range(8)]
    frame = compare_scorecards(cards)
    assert frame.shape == (8, 6)
    assert list(frame.columns) == [*CATEGORIES, "Overall"]
    assert frame.index.name == "tool"

    single = compare_scorecards(cards[:1])
    assert single.shape == (1, 6)
    twins = compare_scorecards([cards[0], cards[0]])
    assert twins.iloc[0].tolist() == twins.iloc[1].tolist()
    with pytest.raises(ValueError):
        compare_scorecards([])


def test_write_scorecard(tmp_path):
    card = score_tool(load_questionnaire())
    path = write_scorecard(card, tmp_path / "out" / "card.yaml")
    data = yaml.safe_load(path.read_text())
    assert data["tool"] == "droidauto"
    assert data["overall"] == 100.0
    assert list(data["scores"]) == list(CATEGORIES)
