/** Overlay colour semantics: model proposals blue, analyst-validated green. */

import { Feature } from './types.js';

export const MODEL_BLUE = '#2d7ff9';
export const ANALYST_GREEN = '#2ecc40';
export const REJECTED_GREY = '#888888';

/**
 * Stroke colour for a feature, or null when it should not be drawn.
 * Rejected features are hidden unless the audit toggle is on.
 */
export function featureColor(feature: Feature, showRejected = false): string | null {
  if (feature.state === 'rejected') {
    return showRejected ? REJECTED_GREY : null;
  }
  if (feature.state === 'accepted' || feature.state === 'added') {
    return ANALYST_GREEN;
  }
  if (feature.source === 'model' && feature.state === 'proposed') {
    return MODEL_BLUE;
  }
  return MODEL_BLUE;
}
