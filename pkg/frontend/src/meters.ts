// Sliding-window rate meters for the send-rate and render-FPS overlays.

export class RateMeter {
  private stamps: number[] = [];

  constructor(private windowMs = 2000, private now: () => number = () => performance.now()) {}

  note(): void {
    const t = this.now();
    this.stamps.push(t);
    this.trim(t);
  }

  rate(): number {
    const t = this.now();
    this.trim(t);
    if (this.stamps.length < 2) return 0;
    const span = t - this.stamps[0];
    if (span <= 0) return 0;
    return ((this.stamps.length - 1) * 1000) / span;
  }

  private trim(t: number): void {
    const cutoff = t - this.windowMs;
    let drop = 0;
    while (drop < this.stamps.length && this.stamps[drop] < cutoff) drop++;
    if (drop > 0) this.stamps.splice(0, drop);
  }
}
