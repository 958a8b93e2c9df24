import { describe, expect, it } from 'vitest';
import { MosaicView, ZOOM_STEPS, attachMosaic } from '../src/viewer';

describe('MosaicView', () => {
  it('steps through x1, x2, x4 and clamps at both ends', () => {
    const v = new MosaicView();
    expect(v.zoom).toBe(1);
    expect(v.zoomIn()).toBe(true);
    expect(v.zoom).toBe(2);
    expect(v.zoomIn()).toBe(true);
    expect(v.zoom).toBe(4);
    expect(v.zoomIn()).toBe(false);
    expect(v.zoom).toBe(4);

    expect(v.zoomOut()).toBe(true);
    expect(v.zoomOut()).toBe(true);
    expect(v.zoomOut()).toBe(false);
    expect(v.zoom).toBe(1);
    expect([...ZOOM_STEPS]).toEqual([1, 2, 4]);
  });

  it('accumulates pans and resets pan when back at x1', () => {
    const v = new MosaicView();
    v.zoomIn();
    v.panBy(10, -4);
    v.panBy(5, 4);
    expect(v.transform()).toBe('translate(15px, 0px) scale(2)');
    v.zoomOut(); // returning to x1 recenters
    expect(v.transform()).toBe('translate(0px, 0px) scale(1)');
  });

  it('reset returns to the identity view', () => {
    const v = new MosaicView();
    v.zoomIn();
    v.zoomIn();
    v.panBy(-30, 12);
    v.reset();
    expect(v.transform()).toBe('translate(0px, 0px) scale(1)');
  });
});

describe('attachMosaic', () => {
  it('wheel zooms between the fixed steps', () => {
    const img = document.createElement('img');
    attachMosaic(img);
    expect(img.style.transform).toBe('translate(0px, 0px) scale(1)');

    img.dispatchEvent(new WheelEvent('wheel', { deltaY: -120 }));
    expect(img.style.transform).toBe('translate(0px, 0px) scale(2)');
    img.dispatchEvent(new WheelEvent('wheel', { deltaY: -120 }));
    img.dispatchEvent(new WheelEvent('wheel', { deltaY: -120 })); // clamped
    expect(img.style.transform).toBe('translate(0px, 0px) scale(4)');
    img.dispatchEvent(new WheelEvent('wheel', { deltaY: 120 }));
    expect(img.style.transform).toBe('translate(0px, 0px) scale(2)');
  });

  it('drag pans and double-click resets', () => {
    const img = document.createElement('img');
    const view = attachMosaic(img);
    view.zoomIn();

    img.dispatchEvent(new MouseEvent('mousedown', { clientX: 100, clientY: 100 }));
    img.dispatchEvent(new MouseEvent('mousemove', { clientX: 130, clientY: 90 }));
    img.dispatchEvent(new MouseEvent('mouseup'));
    expect(view.panX).toBe(30);
    expect(view.panY).toBe(-10);

    // no pan while the button is up
    img.dispatchEvent(new MouseEvent('mousemove', { clientX: 500, clientY: 500 }));
    expect(view.panX).toBe(30);

    img.dispatchEvent(new MouseEvent('dblclick'));
    expect(img.style.transform).toBe('translate(0px, 0px) scale(1)');
  });
});
