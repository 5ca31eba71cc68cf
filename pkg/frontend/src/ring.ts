// Bounded history of spectrogram columns; rendering reads it independently
// of message arrival, so a slow frame never blocks the socket handler.

export class ColumnRing {
  readonly capacity: number;
  readonly nBins: number;
  private data: Float32Array;
  private count = 0;
  private next = 0;

  constructor(capacity: number, nBins: number) {
    this.capacity = capacity;
    this.nBins = nBins;
    this.data = new Float32Array(capacity * nBins).fill(-80);
  }

  push(values: Float32Array): void {
    this.data.set(values.subarray(0, this.nBins), this.next * this.nBins);
    this.next = (this.next + 1) % this.capacity;
    if (this.count < this.capacity) this.count++;
  }

  get length(): number {
    return this.count;
  }

  // age 0 = newest column, age 1 = one before it, ...
  column(age: number): Float32Array {
    const slot = (this.next - 1 - age + 2 * this.capacity) % this.capacity;
    return this.data.subarray(slot * this.nBins, (slot + 1) * this.nBins);
  }
}
