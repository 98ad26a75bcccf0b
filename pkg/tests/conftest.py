"""Shared fixtures: the trained synthetic world used across test modules."""

import pytest

from newsrecon.embedstore import top_k
from newsrecon.pipeline import train_all
from newsrecon.synthetic import SyntheticWorld, desk_config, make_stores


class TrainedWorld:
    """Synthetic world with all three stages trained, built once per session."""

    def __init__(self):
        self.world = SyntheticWorld()
        self.config = desk_config()
        self.stores = make_stores(self.world)
        self.models = train_all(
            self.stores,
            self.world.labels,
            self.world.image_ids("train"),
            self.world.image_ids("dev"),
            self.config,
        )

    def bi_hits(self, image_id: str, k: int):
        query = self.stores.image_head.project(self.stores.image_store.row(image_id))
        return top_k(query, self.stores.projected_captions(), k)


@pytest.fixture(scope="session")
def trained_world():
    return TrainedWorld()
