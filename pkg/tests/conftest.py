"""
Shared pytest fixtures
"""

import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from geometry import BBox, Detection  # noqa: E402


def make_det(box, score=0.9, frame=0, class_id=0, uid=None, proposal=None, video='vid0', sources=None):
    """Detection built from a plain [x1, y1, x2, y2] list"""
    if not isinstance(box, BBox):
        box = BBox(*box)
    uid = uid if uid is not None else f"{video}:f{frame}:{box.as_list()}:{score}"
    if sources is None:
        sources = [proposal] if proposal is not None else [uid]
    return Detection(box=box, class_id=class_id, score=score, frame=frame,
                     source_proposal_ids=frozenset(sources), video_id=video, uid=uid,
                     proposal=proposal)


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(20240611)
