"""Small in-memory corpora shared by model and harness tests."""

from cotforge.forge import DomainKey, VqaCotRecord
from cotforge.geometry import BBox


def record(image_id, box, answer, cot, lesion="mass", modality="CT"):
    return VqaCotRecord(
        image_id=image_id,
        box=box,
        question=f"Which organ contains the {lesion}?",
        answer=answer,
        cot=cot,
        domain=DomainKey(lesion_class=lesion, modality=modality),
        seed=f"There is a {lesion} in the {answer}.",
        generator_id="template-v1",
    )


def tiny_corpus():
    left = BBox(0.05, 0.1, 0.45, 0.9)
    right = BBox(0.55, 0.1, 0.95, 0.9)
    return [
        record("a", left, "liver", "The image shows a mass. It is in the liver."),
        record("b", right, "kidney", "The image shows a mass. It is in the kidney.",
               lesion="cyst"),
        record("c", left, "liver", "The image shows a mass. It is in the liver."),
        record("d", right, "lung", "The image shows a nodule. It sits in the lung.",
               lesion="nodule", modality="XRay"),
    ]
