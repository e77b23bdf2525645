"""Real pretrained encoders. Imports are lazy so synthetic mode never touches
torch; loading a variant downloads weights unless they are already cached."""

import numpy as np


def load_image(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


class ClipEncoder:
    """Contrastive image/text encoder via transformers. The variant string is
    either a hub id or 'model/pretrained-tag', of which only the model part
    matters here."""

    def __init__(self, variant: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ImportError(
                "real extraction needs torch and transformers; install the "
                "[clip] extra or use --synthetic") from exc
        name = variant.split("/", 1)[0]
        hub = {
            "ViT-B-16": "openai/clip-vit-base-patch16",
            "ViT-B-32": "openai/clip-vit-base-patch32",
            "ViT-L-14": "openai/clip-vit-large-patch14",
        }.get(name, variant)
        self._torch = torch
        self.device = device
        self.model = CLIPModel.from_pretrained(hub).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(hub)

    @staticmethod
    def _unit(x: np.ndarray) -> np.ndarray:
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def embed_image_crops(self, crops, batch_size: int = 64) -> np.ndarray:
        # the processor handles resize to the encoder's native input (bicubic)
        out = []
        with self._torch.no_grad():
            for i in range(0, len(crops), batch_size):
                batch = self.processor(
                    images=[np.ascontiguousarray(c) for c in
                            crops[i:i + batch_size]],
                    return_tensors="pt").to(self.device)
                feats = self.model.get_image_features(**batch)
                out.append(feats.float().cpu().numpy())
        return self._unit(np.concatenate(out, axis=0))

    def embed_texts(self, texts) -> np.ndarray:
        with self._torch.no_grad():
            batch = self.processor(text=list(texts), return_tensors="pt",
                                   padding=True).to(self.device)
            feats = self.model.get_text_features(**batch)
        return self._unit(feats.float().cpu().numpy())

    def feature_map(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError(
            "pixel-aligned feature maps need a dense encoder; wire a DINO "
            "backbone here or extract with --synthetic")


def get_embedder(config):
    """SyntheticVocabulary in synthetic mode, else a real encoder. Region
    names must be supplied by the caller for synthetic mode."""
    if config.synthetic:
        raise ValueError("synthetic mode builds a SyntheticVocabulary "
                         "directly; see cli.build_vocabulary")
    if config.encoder in ("open-clip", "clip"):
        return ClipEncoder(config.variant, config.device)
    raise ValueError(f"unknown encoder {config.encoder!r}")
