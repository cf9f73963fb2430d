// Depth ordering for the compositor. LSB radix sort over the float
// bit pattern: stable passes keep submission order on ties, which is
// the exporter-side tie-break too, so renders stay order-invariant.

const scratchKeys: { a?: Uint32Array; b?: Uint32Array; o?: Uint32Array } = {};

function floatKey(bits: number): number {
  // Monotone map from float32 ordering to uint32 ordering: flip all
  // bits of negatives, flip only the sign bit of non-negatives.
  return (bits & 0x80000000) !== 0 ? ~bits >>> 0 : (bits | 0x80000000) >>> 0;
}

export function sortByDepth(depths: Float32Array, count: number): Uint32Array {
  if (scratchKeys.a === undefined || scratchKeys.a.length < count) {
    scratchKeys.a = new Uint32Array(count);
    scratchKeys.b = new Uint32Array(count);
    scratchKeys.o = new Uint32Array(count);
  }
  const bits = new Uint32Array(depths.buffer, depths.byteOffset, count);
  let keys: Uint32Array = scratchKeys.a.subarray(0, count);
  let tmpK: Uint32Array = scratchKeys.b!.subarray(0, count);
  let order: Uint32Array = new Uint32Array(count);
  let tmpO: Uint32Array = scratchKeys.o!.subarray(0, count);

  for (let i = 0; i < count; i++) {
    keys[i] = floatKey(bits[i]);
    order[i] = i;
  }

  const hist = new Uint32Array(256);
  for (let shift = 0; shift < 32; shift += 8) {
    hist.fill(0);
    for (let i = 0; i < count; i++) hist[(keys[i] >>> shift) & 0xff]++;
    let sum = 0;
    for (let b = 0; b < 256; b++) {
      const c = hist[b];
      hist[b] = sum;
      sum += c;
    }
    for (let i = 0; i < count; i++) {
      const dst = hist[(keys[i] >>> shift) & 0xff]++;
      tmpK[dst] = keys[i];
      tmpO[dst] = order[i];
    }
    [keys, tmpK] = [tmpK, keys];
    [order, tmpO] = [tmpO, order];
  }
  // Four passes swap an even number of times, so the result lives in
  // the freshly allocated array, not the shared scratch.
  return order;
}
