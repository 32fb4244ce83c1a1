"""Regenerates the synthetic fixture world, dataset and demonstrations (seed 7)."""
import json, os, random
HERE = os.path.dirname(os.path.abspath(__file__))
rng = random.Random(7)
CATS = ["cat", "dog", "car", "person", "cup", "bicycle"]
COLORS = ["red", "blue", "green", "white", "black"]
ITEMS = ["umbrella", "phone", "book", "kite", "bag"]
W, H = 640, 480
PLACES = ["kitchen", "street", "park", "office", "garage", "beach", "yard", "hall", "market", "station"]

def ql(xs): return "[" + ", ".join("'%s'" % x for x in xs) + "]"
def sig(choices):
    if choices is None: return "def execute_command(image) -> str:"
    return "def execute_command(image, possible_choices=%s) -> str:" % ql(choices)
def code_block(q, choices):
    out = "# %s\n" % q
    if choices is not None: out += "# possible answers : %s\n" % ql(choices)
    return out + sig(choices) + "\n"
def succ_block(q, choices):
    out = "Question: %s\n" % q
    if choices is not None: out += "Choices: %s\n" % ql(choices)
    return out

scenes, instances = [], []
code_rules, instruct_rules, instruct_scoring, vlm_scoring = [], [], [], []
FAULTS = {
    3: ("NameError", "    image_patch = ImagePatch(image)\n    cat_patches = image_patch.find(\"cat\")\n    return str(len(cat_patchs))\n"),
    9: ("AttributeError", "    image_patch = ImagePatch(image)\n    return image_patch.simple_querry(\"What is this?\")\n"),
    14: ("TypeError", "    image_patch = ImagePatch(image)\n    return \"count: \" + len(image_patch.find(\"cup\"))\n"),
    21: ("IndentationError", "    image_patch = ImagePatch(image)\n      patches = image_patch.find(\"dog\")\n    return str(len(patches))\n"),
    27: ("ValueError", "    image_patch = ImagePatch(image)\n    return str(int(\"many\"))\n"),
    33: ("KeyError", "    sizes = {\"small\": 1}\n    return str(sizes[\"large\"])\n"),
    40: ("ZeroDivisionError", "    image_patch = ImagePatch(image)\n    n = len(image_patch.find(\"unicorn\"))\n    return str(10 / n)\n"),
    46: ("SyntaxError", "    image_patch = ImagePatch(image)\n    if image_patch.exists(\"cat\")\n        return \"yes\"\n    return \"no\"\n"),
}
idx = 0
for s in range(10):
    img = "scene%02d" % s
    place = PLACES[s]
    objs = []
    cats = rng.sample(["cat", "dog", "car", "cup", "bicycle"], 3) + ["person"]
    oid = 1
    x = 10
    for c in cats:
        for _ in range(rng.randint(1, 3) if c != "person" else 1):
            w = rng.randint(30, 50); h = rng.randint(30, 80)
            y = rng.randint(10, H - h - 10)
            objs.append({"id": oid, "category": c, "box": [x, y, x + w, y + h],
                         "attributes": [rng.choice(COLORS)], "depth": round(rng.uniform(1, 20), 2)})
            oid += 1; x += w + 6
    person = [o for o in objs if o["category"] == "person"][0]
    item = rng.choice(ITEMS)
    caption = "a scene with " + ", ".join(sorted(set(cats)))
    scene_qa = {"What is in the image?": caption}
    patch_qa = [{"object": person["id"], "question": "What is the person holding?", "answer": item}]
    first = lambda c: sorted([o for o in objs if o["category"] == c], key=lambda o: (o["box"][0], o["box"][1]))[0]
    present = [c for c in cats if c != "person"]
    absent = [c for c in CATS if c not in cats]
    qs = []
    c = present[0]; n = sum(o["category"] == c for o in objs)
    qs.append(("count", "How many %ss are in the %s?" % (c, place), str(n), [str(k) for k in range(1, 5)],
               "    image_patch = ImagePatch(image)\n    %s_patches = image_patch.find(\"%s\")\n    return str(len(%s_patches))\n" % (c, c, c),
               [("How many %ss are there?" % c, str(n))], [str(n)] * 7 + [str(n + 1)] * 3))
    c = present[1]; col = first(c)["attributes"][0]
    qs.append(("color", "What color is the %s in the %s?" % (c, place), col, COLORS[:4] if col in COLORS[:4] else COLORS[1:],
               "    image_patch = ImagePatch(image)\n    %s_patches = image_patch.find(\"%s\")\n    return %s_patches[0].best_text_match(%s)\n" % (c, c, c, json.dumps(COLORS)),
               [("What color is the %s?" % c, col)], [col] * 8 + [rng.choice([k for k in COLORS if k != col])] * 2))
    c = present[2] if s % 2 == 0 else absent[0]; yn = "yes" if s % 2 == 0 else "no"
    qs.append(("exists", "Is there a %s in the %s?" % (c, place), yn, ["yes", "no"],
               "    image_patch = ImagePatch(image)\n    return bool_to_yesno(image_patch.exists(\"%s\"))\n" % c,
               [("Can you see a %s?" % c, yn)], [yn] * 10))
    qs.append(("query", "What is the person in the %s holding?" % place, item, ITEMS[:],
               "    image_patch = ImagePatch(image)\n    person_patches = image_patch.find(\"person\")\n    return person_patches[0].simple_query(\"What is the person holding?\")\n",
               [("What is in the image?", caption), ("What is in the hands of the person?", item)], [item] * 9 + ["a " + item]))
    a, b = present[0], present[1]
    near = a if first(a)["depth"] < first(b)["depth"] else b
    qs.append(("depth", "Which is closer to the camera in the %s, the %s or the %s?" % (place, a, b), near, [a, b],
               "    image_patch = ImagePatch(image)\n    a = image_patch.find(\"%s\")[0]\n    b = image_patch.find(\"%s\")[0]\n    if a.compute_depth() < b.compute_depth():\n        return \"%s\"\n    return \"%s\"\n" % (a, b, a, b),
               [("Which is nearer, the %s or the %s?" % (a, b), near)], [near] * 10))
    for (qt, q, gold, choices, body, steps, answers) in qs:
        iid = "q%03d" % idx
        if idx in FAULTS: body = FAULTS[idx][1]
        # end-to-end answers: mostly right, a few plausible misses
        e2e = gold if idx % 7 != 5 else {"count": str(int(gold) + 1) if gold.isdigit() else gold}.get(qt, "unknown")
        scene_qa[q] = e2e
        for f, ans in steps:
            scene_qa[f] = ans
        instances.append({"id": iid, "image_ref": img, "question": q, "answers": answers,
                          "choices": choices, "question_type": qt, "split": "val"})
        blip_body = body if idx in FAULTS else "    image_patch = ImagePatch(image)\n    return image_patch.simple_query(%s)\n" % json.dumps(q)
        for ch in (None, choices):
            # prompts without the detection API get a single-query program
            code_rules.append({"match": {"all_of": [{"suffix": code_block(q, ch)}, {"not": {"contains": "def find("}}]},
                               "completion": blip_body})
            code_rules.append({"match": {"suffix": code_block(q, ch)}, "completion": body})
            base = succ_block(q, ch)
            done = ""
            for k, (f, ans) in enumerate(steps):
                instruct_scoring.append({"match": {"suffix": base + done}, "scores": {"Follow-up:": -0.2, "Answer to the original question:": -1.1}})
                instruct_rules.append({"match": {"suffix": base + done + "Follow-up:"}, "completion": " " + f})
                done += "Follow-up: %s\nFollow-up answer: %s\n" % (f, ans)
            instruct_scoring.append({"match": {"suffix": base + done}, "scores": {"Follow-up:": -1.3, "Answer to the original question:": -0.4}})
            final = steps[-1][1]
            if ch is None:
                instruct_rules.append({"match": {"suffix": base + done + "Answer to the original question:"}, "completion": " " + final})
            else:
                instruct_scoring.append({"match": {"suffix": base + done + "Answer to the original question: "},
                                         "scores": {c2: (-0.3 if c2 == final else -1.5 - 0.1 * i) for i, c2 in enumerate(ch)}})
        vlm_scoring.append({"match": {"exact": "Question: %s Short answer:" % q}, "image_ref": img,
                            "scores": {c2: (-0.5 if c2 == (gold if idx % 9 != 4 else choices[0]) else -1.4 - 0.1 * i) for i, c2 in enumerate(choices)}})
        instruct_scoring.append({"match": {"prefix": "Choices: %s Candidate: " % ql(choices)},
                                 "scores": {c2: -1.0 for c2 in choices}})
        instruct_scoring.append({"match": {"suffix": "Candidate: %s\nIs the candidate correct? [yes/no]\n" % gold},
                                 "scores": {"yes": -0.2, "no": -1.6}})
        idx += 1
    assert all(0 <= o["box"][0] < o["box"][2] <= W and 0 <= o["box"][1] < o["box"][3] <= H for o in objs)
    scenes.append({"image_ref": img, "width": W, "height": H, "objects": objs, "scene_qa": scene_qa,
                   "patch_qa": patch_qa, "caption": caption})
instruct_scoring.append({"match": {"suffix": "Is the candidate correct? [yes/no]\n"}, "scores": {"yes": -1.2, "no": -0.3}})
world = {"scenes": scenes, "code_lm": {"rules": code_rules}, "instruct_lm": {"rules": instruct_rules, "scoring": instruct_scoring},
         "vlm_scorer": {"scoring": vlm_scoring}, "vqa_fallback": "unknown"}
assert len({i["question"] for i in instances}) == len(instances)
json.dump(world, open(os.path.join(HERE, "world.json"), "w"), indent=1)
with open(os.path.join(HERE, "scene_vqa.jsonl"), "w") as f:
    for i in instances: f.write(json.dumps(i) + "\n")
demos = [
 {"question": "What is the man holding?", "program": "def execute_command(image) -> str:\n    image_patch = ImagePatch(image)\n    return image_patch.simple_query(\"What is the man holding?\")\n"},
 {"question": "Is the bus about to stop?", "program": "def execute_command(image) -> str:\n    image_patch = ImagePatch(image)\n    stop = image_patch.simple_query(\"Is there a bus stop next to the bus?\")\n    return stop\n"},
 {"question": "Which season is it?", "program": "def execute_command(image) -> str:\n    image_patch = ImagePatch(image)\n    clothes = image_patch.simple_query(\"What are the people wearing?\")\n    return image_patch.simple_query(f\"Which season calls for {clothes}?\")\n"},
]
json.dump(demos, open(os.path.join(HERE, "demos_only_blip2.json"), "w"), indent=1)
print(len(instances), len(scenes))
