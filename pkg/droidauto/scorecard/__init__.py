from droidauto.scorecard.questionnaire import (
    CATEGORIES,
    Question,
    Questionnaire,
    Scorecard,
    compare_scorecards,
    load_questionnaire,
    score_category,
    score_tool,
    scorecard_to_dict,
    write_scorecard,
)

__all__ = [
    "CATEGORIES",
    "Question",
    "Questionnaire",
    "Scorecard",
    "compare_scorecards",
    "load_questionnaire",
    "score_category",
    "score_tool",
    "scorecard_to_dict",
    "write_scorecard",
]
