#!/usr/bin/env python3
"""Regenerates the desk-scale toy data shipped in this directory.

Outputs (all deterministic):
  synthetic_road.json  10 RoAD-format entries whose words are all in the toy vocabulary
  synthetic_time.json  4 TIME-format entries
  captions.txt         distractor captions for the contrastive set
  toy_corpus.txt       corpus used for the vocabulary and the key second moments
"""

import json
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent

POSITIVE_FRAMES = [
    "{} in the park",
    "a photo of {}",
    "{} at a dinner",
    "a portrait of {}",
    "{} on the street",
]

ROLES = [
    dict(id="wales", edit="the prince of wales", subject="prince of wales",
         source="prince charles", target="prince william",
         negatives=["prince harry", "the queen of england", "a prince in a castle",
                    "the king of spain", "a horse in the park"]),
    dict(id="president", edit="the president of the united states",
         subject="president of the united states", source="donald trump", target="joe biden",
         negatives=["the president of france", "a white house", "barack obama",
                    "the united nations", "a flag on a pole"]),
    dict(id="monarch", edit="the british monarch", subject="british monarch",
         source="queen elizabeth", target="king charles",
         negatives=["a british flag", "queen victoria", "the french king",
                    "a royal crown", "a castle on a hill"]),
    dict(id="canada", edit="the prime minister of canada", subject="prime minister of canada",
         source="justin trudeau", target="mark carney",
         negatives=["the prime minister of india", "a canadian flag", "a maple leaf",
                    "the mayor of toronto", "a moose in the snow"]),
    dict(id="enterprise", edit="the captain of the enterprise",
         subject="captain of the enterprise", source="james kirk", target="jean picard",
         negatives=["the captain of the team", "a space ship", "a pirate captain",
                    "an old sailor", "the moon at night"]),
]

APPEARANCES = [
    dict(id="apple", edit="an apple", subject="apple", target="an avocado",
         negatives=["a lemon", "a pear", "a banana on a table", "an orange", "a green salad"]),
    dict(id="cat", edit="a cat", subject="cat", target="a tiger",
         negatives=["a dog", "a small bird", "a horse", "a mouse in a house", "a fish tank"]),
    dict(id="computer", edit="a computer", subject="computer", target="a laptop",
         negatives=["a television", "a desk lamp", "a telephone", "a keyboard and a mouse",
                    "a book on a shelf"]),
    dict(id="rose", edit="a rose", subject="rose", target="a tulip",
         negatives=["a sunflower", "a daisy", "a green tree", "a vase of lilies",
                    "a garden in spring"]),
    dict(id="accord", edit="a honda accord", subject="honda accord", target="a red truck",
         negatives=["a toyota camry", "a bicycle", "a yellow bus", "a motorcycle on a road",
                    "a parking lot"]),
]

TIME = [
    dict(id="roses", edit="a pack of roses", subject="roses", target="a pack of blue roses",
         positives=["roses in a vase", "a field of roses", "a bouquet of roses",
                    "roses in the garden", "a photo of roses"],
         negatives=["a pack of tulips", "a blue sky", "a field of grass",
                    "a red apple", "a bouquet of daisies"]),
    dict(id="doctor", edit="a doctor", subject="doctor", target="a female doctor",
         positives=["a doctor in a hospital", "a photo of a doctor", "a doctor at work",
                    "a portrait of a doctor", "a doctor on the street"],
         negatives=["a nurse", "a teacher", "a female singer", "a hospital bed", "a lawyer"]),
    dict(id="icecream", edit="an ice cream", subject="ice cream",
         target="a strawberry ice cream",
         positives=["an ice cream on a table", "a photo of an ice cream",
                    "an ice cream in the park", "a child with an ice cream",
                    "an ice cream at night"],
         negatives=["a block of ice", "a strawberry", "a cup of coffee", "a slice of cake",
                    "a glass of milk"]),
    dict(id="pedestal", edit="a pedestal", subject="pedestal", target="a wooden pedestal",
         positives=["a pedestal in the garden", "a photo of a pedestal",
                    "a pedestal in a museum", "a statue on a pedestal",
                    "a pedestal on the street"],
         negatives=["a wooden chair", "a stone wall", "a table", "a statue of a horse",
                    "a marble floor"]),
]

CAPTIONS = [
    "a man riding a bike down the street", "two dogs playing in the grass",
    "a plate of food on a table", "a woman holding an umbrella in the rain",
    "a train stopped at a station", "a group of people standing on a beach",
    "a bowl of fruit on a counter", "a kitchen with a white stove",
    "a child flying a kite in a field", "a bus driving down a city street",
    "a boat on a calm lake", "a clock tower in a city", "a sandwich and a cup of coffee",
    "a man surfing a large wave", "a bathroom with a white sink",
    "a herd of sheep on a hill", "a bedroom with a large bed", "a pizza in a box",
    "a skier going down a snowy slope", "an airplane flying in the sky",
    "a giraffe standing near a tree", "a red fire hydrant on a sidewalk",
    "a stop sign at an intersection", "a tennis player swinging a racket",
    "a living room with a couch", "a baseball player at the plate",
    "an elephant walking in the dirt", "a zebra grazing in a field",
    "a bench in a quiet park", "a cow standing in a pasture", "a girl eating a donut",
    "a person walking a dog on a leash", "a laptop on a wooden desk",
    "a street sign on a pole", "a truck parked on a road", "a bird sitting on a branch",
    "a man cooking in a kitchen", "a couple sitting on a bench",
    "a traffic light over a road", "a boy playing soccer on a field",
    "a vase of flowers on a window sill", "a bear walking through the woods",
    "a horse pulling a cart", "a table set for dinner", "a snowboarder in the air",
    "a pile of books on a floor", "a woman talking on a phone",
    "a motorcycle parked by a wall", "a teddy bear on a chair", "a cake with candles",
    "people waiting at a bus stop", "a dog sleeping on a couch",
    "a sailboat near the shore", "a market with fresh vegetables",
    "a building with many windows", "a kite high in the sky",
    "a toilet in a small bathroom", "a bowl of soup with a spoon",
    "a young man with a skateboard", "a crowd at a baseball game",
]

FILLER_SUBJECTS = [
    "a man", "a woman", "the child", "a dog", "the old sailor", "a teacher", "the king",
    "a student", "a farmer", "the singer", "a painter", "the queen", "a nurse", "a pilot",
]
FILLER_VERBS = [
    "walks", "sits", "stands", "waits", "sleeps", "runs", "reads", "sings", "eats",
    "looks", "plays", "works",
]
FILLER_PLACES = [
    "in the park", "on the street", "at a dinner", "in a house", "near the river",
    "on a hill", "in the garden", "at the station", "in a museum", "by the sea",
    "in the snow", "at night", "in the city", "on a boat", "in a castle",
]


def role_entry(r):
    def frame_variants(frame):
        return dict(prompt=frame.format(r["edit"]), positive_new=frame.format(r["target"]),
                    positive_old=frame.format(r["source"]))
    return dict(
        id=r["id"], edit_prompt=r["edit"], subject=r["subject"], source=r["source"],
        target=r["target"], kind="role",
        positives=[frame_variants(f) for f in POSITIVE_FRAMES],
        negatives=[dict(prompt=n, negative_new=r["target"], negative_old=n)
                   for n in r["negatives"]],
    )


def appearance_entry(a):
    def frame_variants(frame):
        return dict(prompt=frame.format(a["edit"]), positive_new=frame.format(a["target"]),
                    positive_old=frame.format(a["edit"]))
    return dict(
        id=a["id"], edit_prompt=a["edit"], subject=a["subject"], source=a["edit"],
        target=a["target"], kind="appearance",
        positives=[frame_variants(f) for f in POSITIVE_FRAMES],
        negatives=[dict(prompt=n, negative_new=a["target"], negative_old=n)
                   for n in a["negatives"]],
    )


def time_entry(t):
    return dict(
        id=t["id"], edit_prompt=t["edit"], subject=t["subject"], target_prompt=t["target"],
        positives=[dict(prompt=p, positive_new=p.replace(t["subject"], _specified(t)),
                        positive_old=p) for p in t["positives"]],
        negatives=[dict(prompt=n, negative_new=t["target"], negative_old=n)
                   for n in t["negatives"]],
    )


def _specified(t):
    # "a pack of blue roses" -> "blue roses": the attribute plus the subject.
    words = t["target"].split()
    subject = t["subject"].split()
    idx = len(words) - len(subject)
    return " ".join(words[idx - 1:])


def main():
    road = dict(version=1, split="validation",
                entries=[role_entry(r) for r in ROLES] +
                [appearance_entry(a) for a in APPEARANCES])
    (HERE / "synthetic_road.json").write_text(json.dumps(road, indent=2) + "\n")

    time = dict(version=1, split="validation", entries=[time_entry(t) for t in TIME])
    (HERE / "synthetic_time.json").write_text(json.dumps(time, indent=2) + "\n")

    (HERE / "captions.txt").write_text("\n".join(CAPTIONS) + "\n")

    lines = list(CAPTIONS)
    for entry in road["entries"] + time["entries"]:
        for key in ("edit_prompt", "source", "target", "target_prompt"):
            if key in entry:
                lines.append(entry[key])
        for rec in entry["positives"] + entry["negatives"]:
            lines.extend(v for k, v in rec.items())
    for template in ["a photo of {}", "an image of {}", "a picture of {}", "a painting of {}"]:
        lines.append(template.format("a man"))
    rng = random.Random(0)
    for _ in range(600):
        lines.append(" ".join([rng.choice(FILLER_SUBJECTS), rng.choice(FILLER_VERBS),
                               rng.choice(FILLER_PLACES)]))
    for _ in range(200):
        a, b = rng.sample(CAPTIONS, 2)
        lines.append(a + " and " + b)
    (HERE / "toy_corpus.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
