import pytest

from csegg.core import TripletLabel, Vocabulary
from csegg.prompts import compose_prompt, parse_prompt


@pytest.fixture()
def vocabs():
    objects = Vocabulary(("man", "horse", "house", "cat", "mat", "salt and pepper"))
    predicates = Vocabulary(("on", "behind", "in front of", "next to"))
    return objects, predicates


def label(objects, predicates, s, p, o):
    return TripletLabel(objects.id_of(s), predicates.id_of(p), objects.id_of(o))


class TestComposePrompt:
    def test_three_phrase_example(self, vocabs):
        objects, predicates = vocabs
        labels = [
            label(objects, predicates, "man", "on", "horse"),
            label(objects, predicates, "house", "behind", "horse"),
            label(objects, predicates, "man", "in front of", "house"),
        ]
        p = compose_prompt(labels, objects, predicates)
        assert p.text == (
            "Realistic Image of man on horse and house behind horse "
            "and man in front of house"
        )

    def test_single_label(self, vocabs):
        objects, predicates = vocabs
        p = compose_prompt([label(objects, predicates, "cat", "on", "mat")], objects, predicates)
        assert p.text == "Realistic Image of cat on mat"

    def test_order_preserved(self, vocabs):
        objects, predicates = vocabs
        a = label(objects, predicates, "cat", "on", "mat")
        b = label(objects, predicates, "man", "behind", "horse")
        assert compose_prompt([a, b], objects, predicates).text != \
               compose_prompt([b, a], objects, predicates).text

    def test_empty_rejected(self, vocabs):
        objects, predicates = vocabs
        with pytest.raises(ValueError):
            compose_prompt([], objects, predicates)


class TestParsePrompt:
    def test_round_trip_simple(self, vocabs):
        objects, predicates = vocabs
        labels = [
            label(objects, predicates, "man", "on", "horse"),
            label(objects, predicates, "house", "behind", "horse"),
        ]
        p = compose_prompt(labels, objects, predicates)
        assert parse_prompt(p.text, objects, predicates) == labels

    def test_round_trip_multiword_predicate(self, vocabs):
        objects, predicates = vocabs
        labels = [
            label(objects, predicates, "man", "in front of", "house"),
            label(objects, predicates, "cat", "next to", "mat"),
        ]
        p = compose_prompt(labels, objects, predicates)
        assert parse_prompt(p.text, objects, predicates) == labels

    def test_round_trip_name_containing_and(self, vocabs):
        objects, predicates = vocabs
        labels = [
            label(objects, predicates, "salt and pepper", "on", "mat"),
            label(objects, predicates, "cat", "behind", "salt and pepper"),
        ]
        p = compose_prompt(labels, objects, predicates)
        assert parse_prompt(p.text, objects, predicates) == labels

    def test_round_trip_duplicate_labels(self, vocabs):
        objects, predicates = vocabs
        l = label(objects, predicates, "cat", "on", "mat")
        p = compose_prompt([l, l], objects, predicates)
        assert parse_prompt(p.text, objects, predicates) == [l, l]

    def test_rejects_foreign_words(self, vocabs):
        objects, predicates = vocabs
        with pytest.raises(ValueError):
            parse_prompt("Realistic Image of dragon flies castle", objects, predicates)

    def test_rejects_missing_prefix(self, vocabs):
        objects, predicates = vocabs
        with pytest.raises(ValueError):
            parse_prompt("man on horse", objects, predicates)

    def test_round_trip_random_sequences(self, vocabs):
        import random

        objects, predicates = vocabs
        rng = random.Random(42)
        for _ in range(200):
            labels = [
                TripletLabel(rng.randrange(len(objects)), rng.randrange(len(predicates)),
                             rng.randrange(len(objects)))
                for _ in range(rng.randint(1, 6))
            ]
            p = compose_prompt(labels, objects, predicates)
            assert parse_prompt(p.text, objects, predicates) == labels
