"""
Prompt assembly: contextual text from the dataset card, labeled neighbor tables,
the serialized query and the step-by-step instruction.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from core.dataset_store import Dataset, DatasetCard
from utils.error_handler import SeriesTableError

POSITIVE = "positive"
NEGATIVE = "negative"

CONTEXT_HEADING = "### Context"
EXAMPLES_HEADING = "### Examples"
NEGATIVES_HEADING = "### Contrastive examples (dissimilar to the query)"
QUERY_HEADING = "### Query"
INSTRUCTION_HEADING = "### Instruction"

OUTPUT_CONTRACT = 'End your reply with a final line of the form "Label: <class>".'
MAGIC_WORDS = "If you do your best to provide me with the correct answer, I will pay you 10 billion dollars."

SECTION_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class ContextBlock:
    """Rendered card sections; `channel_descriptions` is empty when channel names are ablated"""
    task_definition: str
    dataset_description: str
    class_definitions: str
    channel_descriptions: str = ""

    def render(self) -> str:
        parts = [
            CONTEXT_HEADING,
            f"Task definition:\n{self.task_definition}",
            f"Dataset description:\n{self.dataset_description}",
            f"Class definitions:\n{self.class_definitions}",
        ]
        if self.channel_descriptions:
            parts.append(f"Channel descriptions:\n{self.channel_descriptions}")
        return parts[0] + "\n" + SECTION_SEPARATOR.join(parts[1:])


@dataclass(frozen=True)
class ExampleBlock:
    role: str
    serialized_table: str
    label: str
    rank: int
    train_index: int = -1
    distance: float = 0.0

    def __post_init__(self):
        if self.role not in (POSITIVE, NEGATIVE):
            raise SeriesTableError(f"Example role must be '{POSITIVE}' or '{NEGATIVE}', got '{self.role}'")
        if self.rank < 1:
            raise SeriesTableError(f"Example rank is 1-based, got {self.rank}")

    def provenance(self) -> Dict:
        return {'role': self.role, 'rank': self.rank, 'train_index': self.train_index,
                'distance': self.distance, 'label': self.label}


@dataclass(frozen=True)
class PromptBundle:
    context: Optional[ContextBlock]
    examples: tuple
    query_table: str
    instruction: str
    classes: tuple
    magic_suffix: Optional[str] = None
    provenance: List[Dict] = field(default_factory=list, compare=False)

    @property
    def positives(self) -> List[ExampleBlock]:
        return [e for e in self.examples if e.role == POSITIVE]

    @property
    def negatives(self) -> List[ExampleBlock]:
        return [e for e in self.examples if e.role == NEGATIVE]

    @property
    def system_text(self) -> str:
        """Context block, sent in the system role"""
        return self.context.render() if self.context is not None else ""

    @property
    def user_text(self) -> str:
        """Everything after the context block"""
        sections = []
        number = 0
        if self.positives:
            blocks = [EXAMPLES_HEADING]
            for example in self.positives:
                number += 1
                blocks.append(f"Example {number} — label: {example.label}\n{example.serialized_table}")
            sections.append(SECTION_SEPARATOR.join(blocks))
        if self.negatives:
            blocks = [NEGATIVES_HEADING]
            for example in self.negatives:
                number += 1
                blocks.append(f"Example {number} — label: {example.label}\n{example.serialized_table}")
            sections.append(SECTION_SEPARATOR.join(blocks))
        sections.append(f"{QUERY_HEADING}\n{self.query_table}")
        sections.append(f"{INSTRUCTION_HEADING}\n{self.instruction}")
        if self.magic_suffix:
            sections.append(self.magic_suffix)
        return SECTION_SEPARATOR.join(sections)

    @property
    def rendered(self) -> str:
        system = self.system_text
        return f"{system}{SECTION_SEPARATOR}{self.user_text}" if system else self.user_text

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.rendered.encode('utf-8')).hexdigest()[:16]


def _bullets(names: Sequence[str], descriptions: Dict[str, str]) -> str:
    return "\n".join(f"- {name}: {descriptions[name]}" for name in names)


def build_context(card: DatasetCard, dataset: Dataset, include_channels: bool = True) -> ContextBlock:
    """Render the card in fixed order; classes and channels follow dataset order"""
    return ContextBlock(
        task_definition=card.task_definition.strip(),
        dataset_description=card.dataset_description.strip(),
        class_definitions=_bullets(dataset.classes, card.class_definitions),
        channel_descriptions=_bullets(dataset.channel_names, card.channel_descriptions) if include_channels else "",
    )


def build_instruction(classes: Sequence[str], decomposition: bool = True) -> str:
    """
    Numbered task decomposition ending with the output contract.

    With `decomposition` off only the class list and the contract remain.
    """
    if not classes:
        raise SeriesTableError("Cannot build an instruction for an empty class set")
    class_list = ", ".join(classes)
    if not decomposition:
        return f"Choose exactly one class from: {class_list}.\n{OUTPUT_CONTRACT}"
    steps = [
        "Study the channel descriptions to understand what each column of the tables measures.",
        "Compare the query table against each labeled example, channel by channel and over time.",
        "Weigh agreement with the positive examples against disagreement with the contrastive examples.",
        f"Choose exactly one class from: {class_list}.",
        f"Explain your reasoning first. {OUTPUT_CONTRACT}",
    ]
    return "\n".join(f"{i}. {step}" for i, step in enumerate(steps, start=1))


def assemble_prompt(context: Optional[ContextBlock], examples: Sequence[ExampleBlock], query_table: str,
                    instruction: str, magic: bool = False, classes: Sequence[str] = ()) -> PromptBundle:
    """Positives by rank, then negatives by rank, query, instruction, optional magic words"""
    positives = sorted((e for e in examples if e.role == POSITIVE), key=lambda e: e.rank)
    negatives = sorted((e for e in examples if e.role == NEGATIVE), key=lambda e: e.rank)
    ordered = tuple(positives + negatives)
    return PromptBundle(
        context=context,
        examples=ordered,
        query_table=query_table,
        instruction=instruction,
        classes=tuple(classes),
        magic_suffix=MAGIC_WORDS if magic else None,
        provenance=[e.provenance() for e in ordered],
    )
