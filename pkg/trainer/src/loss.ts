/**
 * Soft Dice loss over probability maps.
 *
 *   loss = 1 - (2 * sum(p*t) + eps) / (sum(p) + sum(t) + eps)
 *
 * eps = 1.0 smooths the empty-mask case (both sums zero gives loss 0,
 * not NaN) at the cost of a small bias that shrinks with target size.
 * The closed-form gradient, used by tests to cross-check autodiff:
 *
 *   dL/dp_i = -(2*t_i*(sum(p)+sum(t)+eps) - (2*sum(p*t)+eps)) / (sum(p)+sum(t)+eps)^2
 */

import * as tf from "@tensorflow/tfjs";

export const DICE_EPS = 1.0;

export function diceLoss(probs: tf.Tensor, target: tf.Tensor): tf.Scalar {
  if (probs.shape.join(",") !== target.shape.join(",")) {
    throw new Error(
      `shape mismatch: probs ${probs.shape} vs target ${target.shape}`,
    );
  }
  return tf.tidy(() => {
    const inter = tf.sum(tf.mul(probs, target));
    const total = tf.add(tf.sum(probs), tf.sum(target));
    const quotient = tf.div(
      tf.add(tf.mul(inter, 2), DICE_EPS),
      tf.add(total, DICE_EPS),
    );
    return tf.sub(1, quotient) as tf.Scalar;
  });
}

/** Closed-form dL/dp at the given point; same shape as probs. */
export function diceLossGrad(probs: tf.Tensor, target: tf.Tensor): tf.Tensor {
  return tf.tidy(() => {
    const inter = tf.sum(tf.mul(probs, target));
    const total = tf.add(tf.add(tf.sum(probs), tf.sum(target)), DICE_EPS);
    const numer = tf.sub(
      tf.mul(target, tf.mul(total, 2)),
      tf.add(tf.mul(inter, 2), DICE_EPS),
    );
    return tf.div(tf.neg(numer), tf.square(total));
  });
}

/** Hard Dice between a thresholded probability map and a binary target. */
export function hardDice(
  probs: tf.Tensor | Float32Array,
  target: tf.Tensor | Float32Array,
  threshold = 0.5,
): number {
  const p = probs instanceof Float32Array ? probs : (probs.dataSync() as Float32Array);
  const t = target instanceof Float32Array ? target : (target.dataSync() as Float32Array);
  if (p.length !== t.length) {
    throw new Error(`shape mismatch: ${p.length} vs ${t.length} voxels`);
  }
  let inter = 0;
  let total = 0;
  for (let i = 0; i < p.length; i++) {
    const pi = p[i] >= threshold ? 1 : 0;
    const ti = t[i] !== 0 ? 1 : 0;
    inter += pi & ti;
    total += pi + ti;
  }
  return total === 0 ? 1 : (2 * inter) / total;
}
