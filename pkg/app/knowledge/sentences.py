from string import Formatter
from typing import Optional, Tuple

from pydantic import BaseModel

from app.core.errors import BadConfig, MissingPlaceholder, OutOfRange
from app.core.models import Sex, SubjectAttributes

from .models import KnowledgeConfig, PromptSentence

REQUIRED_PLACEHOLDERS = frozenset({"sex", "diagnosis", "age_decade"})

_DECADE_WORDS = (
    "zero",
    "ten",
    "twenty",
    "thirty",
    "forty",
    "fifty",
    "sixty",
    "seventy",
    "eighty",
    "ninety",
    "one hundred",
    "one hundred and ten",
    "one hundred and twenty",
    "one hundred and thirty",
)


class AgeBucket(BaseModel):
    label: str
    lo: int
    hi: int

    @property
    def bounds(self) -> Tuple[int, int]:
        return (self.lo, self.hi)


def bucket_age(age_years: int) -> AgeBucket:
    """Group an age into its decade, e.g. 57 -> [50, 59] "fifty"."""
    if not 0 <= age_years <= 130:
        raise OutOfRange(f"age {age_years} outside [0, 130]")
    decade = age_years // 10
    return AgeBucket(label=_DECADE_WORDS[decade], lo=10 * decade, hi=10 * decade + 9)


def template_fields(template: str) -> set[str]:
    return {field for _, field, _, _ in Formatter().parse(template) if field is not None}


def render_sentence(
    attrs: SubjectAttributes,
    template: Optional[str] = None,
    config: Optional[KnowledgeConfig] = None,
) -> PromptSentence:
    config = config or KnowledgeConfig()
    template = config.template if template is None else template
    fields = template_fields(template)
    missing = REQUIRED_PLACEHOLDERS - fields
    if missing:
        raise MissingPlaceholder(f"template lacks placeholders: {sorted(missing)}")
    unknown = fields - REQUIRED_PLACEHOLDERS
    if unknown:
        raise BadConfig(f"template has unknown placeholders: {sorted(unknown)}")

    sex = config.unspecified_sex_phrase if attrs.sex == Sex.UNSPECIFIED else attrs.sex.value
    diagnosis = attrs.diagnosis.strip() if attrs.diagnosis and attrs.diagnosis.strip() else None
    text = template.format(
        sex=sex,
        diagnosis=diagnosis or config.healthy_phrase,
        age_decade=bucket_age(attrs.age_years).label,
    )
    return PromptSentence(text=text, source_attributes=attrs)
