"""The prompt corpus and the offline mock backends, end to end.

Shows the ten structured VQA prompts, runs one image through the mock VQA
backend (deterministic, keyed on question + image bytes), turns the
resulting transcript into a synthesis prompt, renders synthetic images
with the mock generator, and finishes with a few-shot classification
request answered by the similarity-voting mock classifier.
"""

import tempfile
from pathlib import Path

from nmid import dataio, embed_index, encoder, gateway, prompts
from nmid.encoder import EncoderCheckpoint
from nmid.messages import ImageGenRequest

workdir = Path(tempfile.mkdtemp(prefix="nmid-demo-"))
base = dataio.generate_synthetic_dataset(workdir / "data", 4, 8, 64, seed=13)
records = [
    dataio.ManifestRecord(r.id, r.path, r.label, "train") for r in base.records]
manifest = dataio.DatasetManifest(records=records, label_set=list(base.label_set))

print("the ten structured prompts:")
for i, prompt in enumerate(prompts.cot_prompts(), start=1):
    title = prompt.split("**")[1]
    print(f"  {i:>2}. {title}")

policy = gateway.GatewayPolicy(cache_dir=workdir / "cache", rate_per_sec=100,
                               burst=10)
cfg = encoder.EncoderConfig(image_height=64, image_width=64, channels=1,
                            patch_size=32, embed_dim=64, layers=1, heads=4,
                            head_dim=16, seed=1)
checkpoint = EncoderCheckpoint(params=encoder.init_params(cfg), config=cfg)
store = embed_index.build_index(manifest, checkpoint)
gw = gateway.Gateway(policy, {
    "mock-vqa": gateway.MockVqaBackend(),
    "mock-imagegen": gateway.MockImageGenBackend(),
    "mock-classifier": gateway.MockClassifierBackend(store, checkpoint),
})

# 1) describe one image with the first three prompts
source = manifest.records[0]
image_bytes = Path(source.path).read_bytes()
pairs = []
for pid in range(1, 4):
    req = prompts.build_vqa_request(image_bytes, prompts.cot_prompt(pid),
                                    category_hint=source.label)
    resp = gw.send_chat("mock-vqa", req)
    pairs.append(prompts.QaPair(prompt_id=pid, question=prompts.cot_prompt(pid),
                                answer=resp.text))
print(f"\nVQA answers for {source.id} (mock backend):")
for pair in pairs:
    print(f"  [{pair.prompt_id}] {pair.answer[:84]}...")

# 2) synthesis prompt from the transcript, rendered by the mock generator
transcript = prompts.VqaTranscript(image_id=source.id, pairs=pairs,
                                   backend="mock-vqa")
synth_prompt = prompts.build_synthesis_prompt(transcript)
print(f"\nsynthesis prompt is {len(synth_prompt)} chars; first line:")
print("  " + synth_prompt.splitlines()[0])
images = gw.generate_images("mock-imagegen",
                            ImageGenRequest(prompt=synth_prompt, count=2, size=64))
print(f"mock image generator wrote: {[p.name[:16] + '...' for p in images]}")

# 3) few-shot classification of a held-back image
query = manifest.records[-1]
neighbors = embed_index.top_k_similar(store, store.row(query.id), k=4)
demos = [(Path(r.path).read_bytes(), r.label)
         for r in manifest.records if r.id in {n.id for n in neighbors}]
req = prompts.build_fewshot_prompt(demos, Path(query.path).read_bytes(),
                                   manifest.label_set)
resp = gw.send_chat("mock-classifier", req)
ranked = prompts.parse_ranked_labels(resp.text, manifest.label_set)
print(f"\nquery {query.id} (true label {query.label})")
print(f"mock classifier ranking: {ranked.labels}")

# repeated requests come straight from the content-addressed cache
again = gw.send_chat("mock-classifier", req)
print(f"second identical request served from cache: {again.cached}")
