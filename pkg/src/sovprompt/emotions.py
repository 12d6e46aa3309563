import enum
from typing import Tuple


class Emotion(str, enum.Enum):
    ANGRY = "Angry"
    DISGUST = "Disgust"
    FEAR = "Fear"
    HAPPY = "Happy"
    SAD = "Sad"
    SURPRISE = "Surprise"
    NEUTRAL = "Neutral"

    @classmethod
    def from_label(cls, label: str) -> "Emotion":
        """Case-insensitive lookup of a canonical label; raises ValueError otherwise."""
        key = label.strip().lower()
        for e in cls:
            if e.value.lower() == key:
                return e
        raise ValueError(f"{label!r} is not one of {[e.value for e in cls]}")


VOCABULARY: Tuple[str, ...] = tuple(e.value for e in Emotion)
