// Pan/zoom state for the per-slide patch mosaics. Fixed zoom steps are
// enough for desk-scale review imagery; no deep-zoom tiles here.

export const ZOOM_STEPS = [1, 2, 4] as const;

export class MosaicView {
  zoomIndex = 0;
  panX = 0;
  panY = 0;

  get zoom(): number {
    return ZOOM_STEPS[this.zoomIndex];
  }

  /** returns false when already at the last step */
  zoomIn(): boolean {
    if (this.zoomIndex >= ZOOM_STEPS.length - 1) return false;
    this.zoomIndex += 1;
    return true;
  }

  zoomOut(): boolean {
    if (this.zoomIndex <= 0) return false;
    this.zoomIndex -= 1;
    if (this.zoomIndex === 0) {
      this.panX = 0;
      this.panY = 0;
    }
    return true;
  }

  panBy(dx: number, dy: number): void {
    this.panX += dx;
    this.panY += dy;
  }

  reset(): void {
    this.zoomIndex = 0;
    this.panX = 0;
    this.panY = 0;
  }

  transform(): string {
    return `translate(${this.panX}px, ${this.panY}px) scale(${this.zoom})`;
  }
}

/**
 * Wire wheel-zoom and drag-pan onto a mosaic element. Returns the view so
 * callers (and tests) can inspect or drive it directly.
 */
export function attachMosaic(el: HTMLElement, view: MosaicView = new MosaicView()): MosaicView {
  const apply = () => {
    el.style.transform = view.transform();
  };

  el.addEventListener('wheel', (ev: WheelEvent) => {
    ev.preventDefault();
    if (ev.deltaY < 0) view.zoomIn();
    else view.zoomOut();
    apply();
  });

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  el.addEventListener('mousedown', (ev: MouseEvent) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
  });
  el.addEventListener('mousemove', (ev: MouseEvent) => {
    if (!dragging) return;
    view.panBy(ev.clientX - lastX, ev.clientY - lastY);
    lastX = ev.clientX;
    lastY = ev.clientY;
    apply();
  });
  for (const end of ['mouseup', 'mouseleave'] as const) {
    el.addEventListener(end, () => {
      dragging = false;
    });
  }
  el.addEventListener('dblclick', () => {
    view.reset();
    apply();
  });

  apply();
  return view;
}
