"""The 14-fault taxonomy used by the triage workflow.

Fault names are fixed identifiers the whole toolchain (API, UI, reports)
keys on; four of them mark failure modes first catalogued by this audit
methodology ("novel"), the other ten are previously known vision-model
faults. Descriptions are triage guidance for annotators. The taxonomy is
immutable at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class Fault:
    id: str
    name: str
    description: str
    novel: bool


FAULTS: tuple[Fault, ...] = (
    Fault(
        id="action-vs-stillness-confusion",
        name="Action vs. Stillness confusion",
        novel=True,
        description="Static scenes and scenes with motion rank as near-equivalent; "
                    "captions asserting activity beat accurate captions of a still pose, "
                    "or vice versa.",
    ),
    Fault(
        id="failure-to-identify-the-direction-of-movement-or-positioning-of-objects-in-the-image",
        name="Failure to identify the direction of movement or positioning of objects in the image",
        novel=True,
        description="Left/right or spatial-arrangement claims in the winning caption "
                    "contradict the scene, even when the transformation did not change "
                    "orientation.",
    ),
    Fault(
        id="hallucination-of-water-like-features",
        name="Hallucination of Water-like Features",
        novel=True,
        description="A body of water appears in the winning caption although none is "
                    "visible; wavy textures in the background are a common trigger.",
    ),
    Fault(
        id="misattribution-of-geographic-context",
        name="Misattribution of Geographic Context",
        novel=True,
        description="The winning caption places the scene at a landmark or location "
                    "that objects in the image merely allude to.",
    ),
    Fault(
        id="misinterpretation-of-color",
        name="Misinterpretation of color",
        novel=False,
        description="A color named in the winning caption is attached to the wrong "
                    "object or is simply wrong.",
    ),
    Fault(
        id="confusion-between-objects",
        name="Confusion between objects",
        novel=False,
        description="A visually similar object is substituted for the one actually "
                    "present.",
    ),
    Fault(
        id="inability-to-capture-facial-expressions",
        name="Inability to capture facial expressions",
        novel=False,
        description="Emotions or expressions in the winning caption do not match the "
                    "faces in the image.",
    ),
    Fault(
        id="lack-of-attention-to-details",
        name="Lack of attention to details",
        novel=False,
        description="Small but visually important elements (signs, held objects, "
                    "counts of accessories) are dropped or replaced.",
    ),
    Fault(
        id="different-activities-and-positions-of-people-not-being-encoded-properly",
        name="Different activities and positions of people not being encoded properly",
        novel=False,
        description="What people are doing, or how they are posed relative to each "
                    "other, is wrong in the winning caption.",
    ),
    Fault(
        id="failure-to-account-for-the-size-and-number-of-objects-persons-animals-present-in-the-image",
        name="Failure to account for the size and number of objects/persons/animals present in the image",
        novel=False,
        description="Counts or sizes of people, animals, or objects in the winning "
                    "caption disagree with the image.",
    ),
    Fault(
        id="failure-to-capture-the-difference-in-gender-roles-and-activities",
        name="Failure to capture the difference in gender roles and activities",
        novel=False,
        description="Who is doing what is swapped between the people in the scene.",
    ),
    Fault(
        id="cultural-misrepresentation",
        name="Cultural Misrepresentation",
        novel=False,
        description="Cultural cues, dress, or symbols are misread, changing the "
                    "meaning of the scene.",
    ),
    Fault(
        id="disregarding-object-interactions",
        name="Disregarding object interactions",
        novel=False,
        description="Objects are identified but the relationship between them (held "
                    "by, attached to, next to) is wrong.",
    ),
    Fault(
        id="different-types-of-transportation-animal-confusion",
        name="Different types of transportation/animal confusion",
        novel=False,
        description="One vehicle type or animal species is mistaken for another, or "
                    "one is hallucinated into the scene.",
    ),
)

FAULT_IDS: frozenset[str] = frozenset(f.id for f in FAULTS)


def fault_by_id(fault_id: str) -> Fault:
    for fault in FAULTS:
        if fault.id == fault_id:
            return fault
    raise ValidationError(f"unknown fault id {fault_id!r}")


def validate_fault_ids(fault_ids) -> None:
    unknown = [f for f in fault_ids if f not in FAULT_IDS]
    if unknown:
        raise ValidationError(f"unknown fault ids: {unknown}")
