"""Reference models produced by TensorFlow itself (test-only dependency)."""

from __future__ import annotations

import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import numpy as np


def _tf():
    import tensorflow as tf
    tf.get_logger().setLevel("ERROR")
    return tf


def small_cnn(seed: int = 0, classes: int = 10, size: int = 32, depthwise: bool = True):
    tf = _tf()
    tf.keras.utils.set_random_seed(seed)
    L = tf.keras.layers
    inp = tf.keras.Input((size, size, 3), name="image")
    x = L.Conv2D(8, 3, padding="same", activation="relu")(inp)
    if depthwise:
        x = L.DepthwiseConv2D(3, strides=2, padding="same", depth_multiplier=2, activation="relu6")(x)
    x = L.Conv2D(16, 3, strides=2, padding="valid")(x)
    x = L.ReLU()(x)
    x = L.MaxPooling2D(2, padding="same")(x)
    x = L.AveragePooling2D(2, padding="same")(x)
    x = L.Flatten()(x)
    x = L.Dense(24, activation="relu")(x)
    x = L.Dense(classes)(x)
    out = L.Softmax(name="probs")(x)
    model = tf.keras.Model(inp, out)
    # non-trivial biases
    for w in model.weights:
        if "bias" in w.name:
            w.assign(np.random.default_rng(seed).normal(0, 0.1, w.shape).astype(np.float32))
    return model


def gap_cnn(seed: int = 1, classes: int = 5):
    tf = _tf()
    tf.keras.utils.set_random_seed(seed)
    L = tf.keras.layers
    inp = tf.keras.Input((24, 24, 3))
    x = L.Conv2D(8, 3, padding="same", activation="relu")(inp)
    y = L.Conv2D(8, 1, padding="same")(x)
    x = L.Add()([x, y])
    x = L.GlobalAveragePooling2D()(x)
    out = L.Dense(classes, activation="softmax")(x)
    return tf.keras.Model(inp, out)


def to_tflite(model, quantize: bool = False, rep_seed: int = 0) -> bytes:
    tf = _tf()
    # fixed batch of one, as shipped on devices; a symbolic batch makes the
    # converter emit shape arithmetic around Flatten/Reshape
    spec = tf.TensorSpec([1] + list(model.input_shape[1:]), tf.float32)
    fn = tf.function(lambda x: model(x, training=False)).get_concrete_function(spec)
    from tensorflow.python.framework.convert_to_constants import convert_variables_to_constants_v2
    conv = tf.lite.TFLiteConverter.from_concrete_functions([convert_variables_to_constants_v2(fn)])
    if quantize:
        shape = [1] + list(model.input_shape[1:])
        rng = np.random.default_rng(rep_seed)

        def rep():
            for _ in range(32):
                yield [rng.uniform(0, 1, shape).astype(np.float32)]

        conv.optimizations = [tf.lite.Optimize.DEFAULT]
        conv.representative_dataset = rep
        conv.target_spec.supported_ops = [tf.lite.OpsSet.TFLITE_BUILTINS_INT8]
        conv.inference_input_type = tf.uint8
        conv.inference_output_type = tf.uint8
    return conv.convert()


def to_graphdef(model) -> bytes:
    tf = _tf()
    from tensorflow.python.framework.convert_to_constants import convert_variables_to_constants_v2

    spec = tf.TensorSpec([1] + list(model.input_shape[1:]), tf.float32, name="input")
    fn = tf.function(lambda x: model(x, training=False)).get_concrete_function(spec)
    frozen = convert_variables_to_constants_v2(fn)
    return frozen.graph.as_graph_def().SerializeToString()


def interpret(model_bytes: bytes, x: np.ndarray) -> np.ndarray:
    """Run the TF Lite interpreter one sample at a time (models have batch 1)."""
    tf = _tf()
    it = tf.lite.Interpreter(model_content=model_bytes)
    it.allocate_tensors()
    inp = it.get_input_details()[0]
    out = it.get_output_details()[0]
    res = []
    for sample in x:
        it.set_tensor(inp["index"], sample[None].astype(inp["dtype"]))
        it.invoke()
        res.append(it.get_tensor(out["index"])[0])
    return np.stack(res)
