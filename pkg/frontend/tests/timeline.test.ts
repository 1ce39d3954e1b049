import { describe, expect, it } from 'vitest'

import { TimelineModel } from '../src/timeline.js'

function filled(): TimelineModel {
  const timeline = new TimelineModel()
  timeline.upsert({
    utteranceId: 'u1',
    direction: 'sent',
    at: 1000,
    originalText: 'hello world',
  })
  timeline.upsert({
    utteranceId: 'u2',
    direction: 'received',
    at: 5000,
    originalText: 'bonjour mon ami',
    translationText: 'hello my friend',
  })
  timeline.upsert({
    utteranceId: 'u3',
    direction: 'received',
    at: 9000,
    originalText: 'merci',
    translationText: 'thanks',
  })
  return timeline
}

describe('timeline review', () => {
  it('zooming a card reveals original text and translation for that id', () => {
    const timeline = filled()
    const card = timeline.zoomIn('u2')
    expect(card?.originalText).toBe('bonjour mon ami')
    expect(card?.translationText).toBe('hello my friend')
    const layout = timeline.layout()
    const expanded = layout.find((l) => l.expanded)
    expect(expanded?.utteranceId).toBe('u2')
    const others = layout.filter((l) => !l.expanded)
    expect(others.every((l) => l.scale < (expanded?.scale ?? 0))).toBe(true)
  })

  it('cards enrich as translations arrive later', () => {
    const timeline = new TimelineModel()
    timeline.upsert({ utteranceId: 'u9', direction: 'sent', at: 0, originalText: 'good morning' })
    timeline.upsert({ utteranceId: 'u9', translationText: 'bon matin' })
    const card = timeline.zoomIn('u9')
    expect(card?.originalText).toBe('good morning')
    expect(card?.translationText).toBe('bon matin')
    expect(timeline.cards).toHaveLength(1)
  })

  it('drag clamps at both ends of the strip', () => {
    const timeline = filled()
    timeline.drag(-5)
    expect(timeline.focus).toBe(0)
    timeline.drag(99)
    expect(timeline.focus).toBe(timeline.cards.length - 1)
  })

  it('zooming out restores uniform card sizes', () => {
    const timeline = filled()
    timeline.zoomIn('u1')
    timeline.zoomOut()
    const layout = timeline.layout()
    expect(new Set(layout.map((l) => l.scale)).size).toBe(1)
    expect(layout.every((l) => !l.expanded)).toBe(true)
  })

  it('cards stay in capture order', () => {
    const timeline = new TimelineModel()
    timeline.upsert({ utteranceId: 'late', direction: 'received', at: 9000 })
    timeline.upsert({ utteranceId: 'early', direction: 'sent', at: 100 })
    expect(timeline.cards.map((c) => c.utteranceId)).toEqual(['early', 'late'])
  })
})
