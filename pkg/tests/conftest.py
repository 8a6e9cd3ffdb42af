import pytest

from surrex.evidence import EffectPair, EvidenceClass, StudyRecord


def make_record(sid, cls="RCT", y1=-0.3, se1=0.1, y2=-0.2, se2=0.1, rho_w=None):
    arms = (f"{sid}T", f"{sid}C") if EvidenceClass.parse(cls) is EvidenceClass.SRWE else None
    return StudyRecord(sid, sid, cls, EffectPair(y1, se1, y2, se2, rho_w), arms=arms)


@pytest.fixture
def mixed_records():
    """7 RCT, 4 cRWE and 3 matched sRWE records."""
    out = [make_record(f"R{i}", "RCT", y1=-0.1 * i) for i in range(7)]
    out += [make_record(f"C{i}", "cRWE", y1=-0.05 * i) for i in range(4)]
    out += [make_record(f"S{i}", "sRWE") for i in range(3)]
    return out
